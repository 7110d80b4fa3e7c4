use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Barrier, Mutex};
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::objectives::FiniteSum;
use crate::optimizers::{
    draw, estimate_cost, snapshot_cost, vr_estimate, Algorithm, RunConfig, DIVERGENCE_LIMIT,
};
use crate::sampling::Sampler;
use crate::trace::{telemetry, Clock, Trace, TraceRecord};
use crate::zo_estimator::{combine_component_diffs, component_diffs, SnapshotGradient};

/// Shared iterate of `N` word-sized atomic cells holding `f64` bits.
///
/// Single coordinates are read and written atomically. A whole-vector read is
/// a sequence of independent coordinate loads and may mix values from
/// different logical times.
#[derive(Debug)]
pub struct SharedIterate {
    cells: Vec<AtomicU64>,
}

impl SharedIterate {
    pub fn new(x: &[f64]) -> Self {
        SharedIterate {
            cells: x.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn load(&self, j: usize) -> f64 {
        f64::from_bits(self.cells[j].load(Ordering::Relaxed))
    }

    /// Unsynchronized vector read into `buf`.
    pub fn read_into(&self, buf: &mut [f64]) {
        for (b, c) in buf.iter_mut().zip(&self.cells) {
            *b = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.read_into(&mut v);
        v
    }

    /// Atomic read-modify-write `x_j ← x_j − delta`; returns the new value.
    /// Concurrent subtractions on one coordinate compose additively.
    pub fn fetch_sub(&self, j: usize, delta: f64) -> f64 {
        let prev = self.cells[j]
            .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |bits| {
                Some((f64::from_bits(bits) - delta).to_bits())
            })
            .expect("update closure always returns Some");
        f64::from_bits(prev) - delta
    }
}

/// Test hook: one worker sleeps after reading its first ticket of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stall {
    pub worker: usize,
    pub epoch: usize,
    pub duration: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsyncOptions {
    pub workers: usize,
    pub stall: Option<Stall>,
}

impl AsyncOptions {
    pub fn workers(workers: usize) -> Self {
        AsyncOptions { workers, stall: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AsyncStats {
    pub updates_per_epoch: Vec<usize>,
    pub updates_per_worker: Vec<usize>,
    /// Ticket counter observed by the stalled worker when it woke up.
    pub counter_after_stall: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsyncOutput {
    pub x: Vec<f64>,
    pub trace: Trace,
    pub evals: u64,
    pub stats: AsyncStats,
}

struct EpochState {
    components: AtomicUsize,
    tickets: AtomicUsize,
    applied: AtomicUsize,
}

struct Shared<'a, O: ?Sized> {
    obj: &'a O,
    cfg: &'a RunConfig,
    opts: &'a AsyncOptions,
    iterate: SharedIterate,
    /// Per-component central-difference rows of the current snapshot, `l × N`.
    rows: Vec<AtomicU64>,
    epochs: Vec<EpochState>,
    barrier: Barrier,
    abort: AtomicBool,
    failure: Mutex<Option<Error>>,
    counter_after_stall: AtomicUsize,
}

impl<O: FiniteSum + ?Sized> Shared<'_, O> {
    fn fail(&self, err: Error) {
        self.abort.store(true, Ordering::SeqCst);
        let mut slot = self.failure.lock().unwrap_or_else(|p| p.into_inner());
        slot.get_or_insert(err);
    }

    fn aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }

    /// Runs `work`, turning errors and panics into a run abort.
    fn guarded(&self, work: impl FnOnce() -> Result<()>) {
        match catch_unwind(AssertUnwindSafe(work)) {
            Ok(Ok(())) => {}
            Ok(Err(e)) => self.fail(e),
            Err(panic) => {
                let message = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "worker panicked".into());
                self.fail(Error::Worker {
                    message,
                    trace: Box::default(),
                });
            }
        }
    }
}

/// Lock-free AsyDSZOVR on `opts.workers` threads.
///
/// Per epoch: barrier, every worker copies the (quiescent) shared vector as
/// the snapshot, component difference rows are computed cooperatively, a
/// second barrier, then workers draw tickets from an atomic counter until `m`
/// inner iterations are consumed. Each inner iteration reads the shared vector
/// without synchronization, forms the variance-reduced estimate and applies it
/// coordinate by coordinate with atomic subtraction. A final barrier closes
/// the epoch. Telemetry is taken only at epoch boundaries.
///
/// Worker `w` samples from stream `w` of `cfg.seed`, so one worker reproduces
/// [`run_dszovr`](crate::optimizers::run_dszovr) bit for bit.
pub fn run_async<O: FiniteSum + ?Sized>(obj: &O, cfg: &RunConfig, opts: &AsyncOptions) -> Result<AsyncOutput> {
    if cfg.algorithm != Algorithm::Dszovr {
        return Err(Error::config("run_async needs algorithm = dszovr"));
    }
    if opts.workers == 0 {
        return Err(Error::config("worker count p must be at least 1"));
    }
    cfg.validate(obj)?;
    let (n, l) = (obj.dim(), obj.num_components());
    let shared = Shared {
        obj,
        cfg,
        opts,
        iterate: SharedIterate::new(&cfg.start_point(n)),
        rows: (0..n * l).map(|_| AtomicU64::new(0)).collect(),
        epochs: (0..cfg.epochs)
            .map(|_| EpochState {
                components: AtomicUsize::new(0),
                tickets: AtomicUsize::new(0),
                applied: AtomicUsize::new(0),
            })
            .collect(),
        barrier: Barrier::new(opts.workers),
        abort: AtomicBool::new(false),
        failure: Mutex::new(None),
        counter_after_stall: AtomicUsize::new(usize::MAX),
    };

    let results: Vec<(usize, Option<Trace>)> = thread::scope(|scope| {
        let handles: Vec<_> = (0..opts.workers)
            .map(|w| {
                let shared = &shared;
                scope.spawn(move || worker(shared, w))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or((0, None)))
            .collect()
    });

    let trace = results.iter().find_map(|(_, t)| t.clone()).unwrap_or_default();
    if let Some(err) = shared.failure.into_inner().unwrap_or_else(|p| p.into_inner()) {
        let iteration = trace.last().map_or(0, |r| r.global_iter);
        return Err(match err {
            Error::Diverged { reason, .. } => Error::Diverged {
                iteration,
                reason,
                trace: Box::new(trace),
            },
            Error::Worker { message, .. } => Error::Worker {
                message,
                trace: Box::new(trace),
            },
            other => other,
        });
    }

    let evals = cfg.epochs as u64 * (snapshot_cost(n, l) + cfg.inner as u64 * estimate_cost(cfg.batch, cfg.block));
    let stall_counter = shared.counter_after_stall.load(Ordering::SeqCst);
    Ok(AsyncOutput {
        x: shared.iterate.to_vec(),
        trace,
        evals,
        stats: AsyncStats {
            updates_per_epoch: shared.epochs.iter().map(|e| e.applied.load(Ordering::SeqCst)).collect(),
            updates_per_worker: results.iter().map(|(u, _)| *u).collect(),
            counter_after_stall: (stall_counter != usize::MAX).then_some(stall_counter),
        },
    })
}

fn worker<O: FiniteSum + ?Sized>(sh: &Shared<'_, O>, w: usize) -> (usize, Option<Trace>) {
    let cfg = sh.cfg;
    let (n, l, m) = (sh.obj.dim(), sh.obj.num_components(), cfg.inner);
    let mut sampler = Sampler::new(cfg.seed, w as u64);
    let mut read = vec![0.0; n];
    let mut updates = 0usize;
    let clock = Clock::new(cfg.wall_clock);
    let per_epoch_evals = snapshot_cost(n, l) + m as u64 * estimate_cost(cfg.batch, cfg.block);
    let mut trace = (w == 0).then(Trace::new);

    let record = |trace: &mut Trace, epoch: usize, iter: usize, global: u64, evals: u64| -> Result<()> {
        let x = sh.iterate.to_vec();
        let (f, grad_norm_sq) = telemetry(sh.obj, &x)?;
        trace.push(TraceRecord {
            epoch,
            iter,
            global_iter: global,
            f,
            grad_norm_sq,
            evals,
            wall_ms: clock.ms(),
        });
        if !f.is_finite() || f.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                iteration: global,
                reason: format!("objective value {f}"),
                trace: Box::default(),
            });
        }
        Ok(())
    };

    if let Some(t) = trace.as_mut() {
        sh.guarded(|| record(t, 0, 0, 0, 0));
    }

    for s in 0..cfg.epochs {
        let state = &sh.epochs[s];
        sh.barrier.wait();
        let snapshot_x = sh.iterate.to_vec();
        if !sh.aborted() {
            sh.guarded(|| {
                loop {
                    let i = state.components.fetch_add(1, Ordering::Relaxed);
                    if i >= l || sh.aborted() {
                        break;
                    }
                    let row = component_diffs(sh.obj, i, &snapshot_x, &cfg.mu)?;
                    for (cell, v) in sh.rows[i * n..(i + 1) * n].iter().zip(row) {
                        cell.store(v.to_bits(), Ordering::Relaxed);
                    }
                }
                Ok(())
            });
        }
        sh.barrier.wait();

        if !sh.aborted() {
            sh.guarded(|| {
                let rows: Vec<f64> = sh.rows.iter().map(|c| f64::from_bits(c.load(Ordering::Relaxed))).collect();
                let snap = SnapshotGradient {
                    g_mu: combine_component_diffs(rows.chunks_exact(n), n),
                    snapshot_x: snapshot_x.clone(),
                    epoch: s,
                };
                let mut first_ticket = true;
                loop {
                    if sh.aborted() {
                        break;
                    }
                    let ticket = state.tickets.fetch_add(1, Ordering::Relaxed);
                    if ticket >= m {
                        break;
                    }
                    sh.iterate.read_into(&mut read);
                    let (batch, block) = draw(&mut sampler, l, cfg.batch, n, cfg.block)?;
                    if let Some(stall) = sh.opts.stall {
                        if first_ticket && stall.worker == w && stall.epoch == s {
                            thread::sleep(stall.duration);
                            sh.counter_after_stall
                                .store(state.tickets.load(Ordering::SeqCst), Ordering::SeqCst);
                        }
                    }
                    first_ticket = false;
                    let v = vr_estimate(sh.obj, &read, &snap, &batch, &block, &cfg.mu, s, ticket)?;
                    for (&j, &vj) in block.indices().iter().zip(&v.values) {
                        let now = sh.iterate.fetch_sub(j, cfg.gamma * vj);
                        if !now.is_finite() || now.abs() > DIVERGENCE_LIMIT {
                            return Err(Error::Diverged {
                                iteration: (s * m + ticket) as u64,
                                reason: format!("coordinate {j} = {now}"),
                                trace: Box::default(),
                            });
                        }
                    }
                    state.applied.fetch_add(1, Ordering::Relaxed);
                    updates += 1;
                }
                Ok(())
            });
        }
        sh.barrier.wait();

        if let Some(t) = trace.as_mut() {
            if !sh.aborted() && m > 0 {
                let global = ((s + 1) * m) as u64;
                sh.guarded(|| record(t, s, m, global, (s as u64 + 1) * per_epoch_evals));
            }
        }
    }
    (updates, trace)
}
