//! Sequential optimizers: DSZOVR (the variance-reduced method run by one
//! worker) and the AsySZO single-loop baseline, together with the estimate and
//! update rules shared with the asynchronous backends.

use crate::error::{Error, Result};
use crate::objectives::FiniteSum;
use crate::sampling::{Batch, CoordinateBlock, Sampler};
use crate::trace::{telemetry, Clock, Trace, TraceRecord};
use crate::zo_estimator::{
    batch_block_mean, block_gradient, check_mu_dim, full_smoothed_gradient, restrict_snapshot, SmoothingSchedule,
    SnapshotGradient,
};

/// Abort threshold on `|f(x)|` and `‖x‖∞`.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dszovr,
    Asyszo,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dszovr => "dszovr",
            Algorithm::Asyszo => "asyszo",
        }
    }
}

/// Step-size schedule of the AsySZO baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDecay {
    /// `γ_t = γ₀ / √(t+1)`
    InvSqrt,
    Constant,
}

impl StepDecay {
    pub fn step(self, gamma0: f64, t: u64) -> f64 {
        match self {
            StepDecay::InvSqrt => gamma0 / ((t + 1) as f64).sqrt(),
            StepDecay::Constant => gamma0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StepDecay::InvSqrt => "inv_sqrt",
            StepDecay::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Constant step size of DSZOVR.
    pub gamma: f64,
    /// Outer loops `S`.
    pub epochs: usize,
    /// Inner iterations `m` per epoch.
    pub inner: usize,
    /// Mini-batch size `b`.
    pub batch: usize,
    /// Coordinate block size `Y`.
    pub block: usize,
    pub mu: SmoothingSchedule,
    pub seed: u64,
    /// Initial step of the AsySZO baseline.
    pub gamma0: f64,
    pub decay: StepDecay,
    /// Total AsySZO iterations; `None` means `epochs * inner`.
    pub iterations: Option<u64>,
    /// Starting point, zeros when `None`.
    pub x0: Option<Vec<f64>>,
    /// Record telemetry every this many global iterations, in addition to
    /// epoch boundaries. Zero records epoch boundaries only.
    pub trace_every: u64,
    /// Fill the `wall_ms` column; off keeps traces byte-identical across runs.
    pub wall_clock: bool,
}

impl RunConfig {
    /// DSZOVR defaults for a problem of dimension `dim`.
    pub fn new(dim: usize) -> Self {
        RunConfig {
            algorithm: Algorithm::Dszovr,
            gamma: 0.01,
            epochs: 10,
            inner: 100,
            batch: 1,
            block: 1,
            mu: SmoothingSchedule::uniform(dim.max(1), 1e-2).expect("positive radius"),
            seed: 0,
            gamma0: 0.01,
            decay: StepDecay::InvSqrt,
            iterations: None,
            x0: None,
            trace_every: 0,
            wall_clock: false,
        }
    }

    pub fn total_iterations(&self) -> u64 {
        match self.algorithm {
            Algorithm::Dszovr => (self.epochs * self.inner) as u64,
            Algorithm::Asyszo => self.iterations.unwrap_or((self.epochs * self.inner) as u64),
        }
    }

    pub fn validate<O: FiniteSum + ?Sized>(&self, obj: &O) -> Result<()> {
        let n = obj.dim();
        let l = obj.num_components();
        if self.epochs == 0 {
            return Err(Error::config("S (epochs) must be at least 1"));
        }
        if self.batch == 0 || self.batch > l {
            return Err(Error::config(format!("b must satisfy 1 <= b <= l (b = {}, l = {l})", self.batch)));
        }
        if self.block == 0 || self.block > n {
            return Err(Error::config(format!("Y must satisfy 1 <= Y <= N (Y = {}, N = {n})", self.block)));
        }
        check_mu_dim(&self.mu, n)?;
        match self.algorithm {
            Algorithm::Dszovr if !(self.gamma > 0.0 && self.gamma.is_finite()) => {
                return Err(Error::config(format!("gamma must be positive, got {}", self.gamma)));
            }
            Algorithm::Asyszo if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) => {
                return Err(Error::config(format!("gamma0 must be positive, got {}", self.gamma0)));
            }
            _ => {}
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return Err(Error::config(format!("x0 has length {} but N = {n}", x0.len())));
            }
        }
        Ok(())
    }

    pub(crate) fn start_point(&self, dim: usize) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| vec![0.0; dim])
    }
}

/// Variance-reduced estimate on a block, on the `N/Y` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct VrEstimate {
    pub block: CoordinateBlock,
    pub values: Vec<f64>,
    pub batch: Batch,
    pub epoch: usize,
    pub iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub x: Vec<f64>,
    pub trace: Trace,
    /// Component evaluations spent by the optimizer.
    pub evals: u64,
}

/// Evaluations for one variance-reduced estimate.
pub fn estimate_cost(batch: usize, block: usize) -> u64 {
    4 * (batch * block) as u64
}

/// Evaluations for one full snapshot gradient.
pub fn snapshot_cost(dim: usize, components: usize) -> u64 {
    2 * (dim * components) as u64
}

/// `v̂ = (1/|B|)Σ G_J(x̂; f_i) − (1/|B|)Σ G_J(x̃; f_i) + G_J(x̃; f)`.
///
/// When `x_hat` equals the snapshot point bitwise, the two batch terms are
/// computed identically and cancel exactly.
#[allow(clippy::too_many_arguments)]
pub fn vr_estimate<O: FiniteSum + ?Sized>(
    obj: &O,
    x_hat: &[f64],
    snap: &SnapshotGradient,
    batch: &Batch,
    block: &CoordinateBlock,
    mu: &SmoothingSchedule,
    epoch: usize,
    iter: usize,
) -> Result<VrEstimate> {
    if snap.epoch != epoch {
        return Err(Error::StaleSnapshot {
            requested: epoch,
            snapshot: snap.epoch,
        });
    }
    let at_read = batch_block_mean(obj, batch, x_hat, block, mu)?;
    let at_snapshot = batch_block_mean(obj, batch, &snap.snapshot_x, block, mu)?;
    let full = restrict_snapshot(snap, block);
    let values = at_read
        .iter()
        .zip(&at_snapshot)
        .zip(&full.values)
        .map(|((a, c), g)| a - c + g)
        .collect();
    Ok(VrEstimate {
        block: block.clone(),
        values,
        batch: batch.clone(),
        epoch,
        iter,
    })
}

/// `x_J ← x_J − γ v_J`; coordinates outside the block are untouched.
pub fn apply_update(x: &mut [f64], v: &VrEstimate, gamma: f64) {
    apply_block(x, &v.block, &v.values, gamma);
}

pub(crate) fn apply_block(x: &mut [f64], block: &CoordinateBlock, values: &[f64], gamma: f64) {
    for (&j, &v) in block.indices().iter().zip(values) {
        x[j] -= gamma * v;
    }
}

/// Batch then block, the draw order every backend uses.
pub(crate) fn draw(sampler: &mut Sampler, components: usize, b: usize, dim: usize, y: usize) -> Result<(Batch, CoordinateBlock)> {
    let batch = sampler.sample_minibatch(components, b)?;
    let block = sampler.sample_block(dim, y)?;
    Ok((batch, block))
}

pub(crate) fn block_out_of_range(x: &[f64], block: &CoordinateBlock) -> Option<usize> {
    block
        .indices()
        .iter()
        .copied()
        .find(|&j| !x[j].is_finite() || x[j].abs() > DIVERGENCE_LIMIT)
}

/// Trace bookkeeping shared by the sequential and simulated runners.
pub(crate) struct Recorder {
    pub trace: Trace,
    pub evals: u64,
    pub global: u64,
    clock: Clock,
    every: u64,
}

impl Recorder {
    pub(crate) fn new(cfg: &RunConfig) -> Self {
        Recorder {
            trace: Trace::new(),
            evals: 0,
            global: 0,
            clock: Clock::new(cfg.wall_clock),
            every: cfg.trace_every,
        }
    }

    pub(crate) fn due(&self) -> bool {
        self.every > 0 && self.global.is_multiple_of(self.every)
    }

    pub(crate) fn record<O: FiniteSum + ?Sized>(&mut self, obj: &O, x: &[f64], epoch: usize, iter: usize) -> Result<()> {
        if self.trace.last().is_some_and(|r| r.global_iter >= self.global) {
            return Ok(());
        }
        let (f, grad_norm_sq) = telemetry(obj, x)?;
        self.trace.push(TraceRecord {
            epoch,
            iter,
            global_iter: self.global,
            f,
            grad_norm_sq,
            evals: self.evals,
            wall_ms: self.clock.ms(),
        });
        if !f.is_finite() || f.abs() > DIVERGENCE_LIMIT {
            return Err(self.diverged(format!("objective value {f}")));
        }
        Ok(())
    }

    pub(crate) fn diverged(&mut self, reason: String) -> Error {
        Error::Diverged {
            iteration: self.global,
            reason,
            trace: Box::new(std::mem::take(&mut self.trace)),
        }
    }
}

/// DSZOVR: per epoch a snapshot and its full central-difference gradient, then
/// `m` sampled variance-reduced block updates. The last inner iterate starts
/// the next epoch.
pub fn run_dszovr<O: FiniteSum + ?Sized>(obj: &O, cfg: &RunConfig) -> Result<RunOutput> {
    if cfg.algorithm != Algorithm::Dszovr {
        return Err(Error::config("run_dszovr needs algorithm = dszovr"));
    }
    cfg.validate(obj)?;
    let (n, l) = (obj.dim(), obj.num_components());
    let mut x = cfg.start_point(n);
    let mut sampler = Sampler::new(cfg.seed, 0);
    let mut rec = Recorder::new(cfg);
    rec.record(obj, &x, 0, 0)?;

    for s in 0..cfg.epochs {
        let snap = full_smoothed_gradient(obj, &x, &cfg.mu, s)?;
        rec.evals += snapshot_cost(n, l);
        for t in 0..cfg.inner {
            let (batch, block) = draw(&mut sampler, l, cfg.batch, n, cfg.block)?;
            let v = vr_estimate(obj, &x, &snap, &batch, &block, &cfg.mu, s, t)?;
            rec.evals += estimate_cost(cfg.batch, cfg.block);
            apply_update(&mut x, &v, cfg.gamma);
            rec.global += 1;
            if let Some(j) = block_out_of_range(&x, &block) {
                return Err(rec.diverged(format!("coordinate {j} = {}", x[j])));
            }
            if rec.due() {
                rec.record(obj, &x, s, t + 1)?;
            }
        }
        if cfg.inner > 0 {
            rec.record(obj, &x, s, cfg.inner)?;
        }
    }
    Ok(RunOutput {
        x,
        evals: rec.evals,
        trace: rec.trace,
    })
}

/// AsySZO baseline run sequentially: one component and one block per
/// iteration, step `γ_t` from the decay schedule, no snapshots.
pub fn run_asyszo_sequential<O: FiniteSum + ?Sized>(obj: &O, cfg: &RunConfig) -> Result<RunOutput> {
    if cfg.algorithm != Algorithm::Asyszo {
        return Err(Error::config("run_asyszo_sequential needs algorithm = asyszo"));
    }
    cfg.validate(obj)?;
    let (n, l) = (obj.dim(), obj.num_components());
    let mut x = cfg.start_point(n);
    let mut sampler = Sampler::new(cfg.seed, 0);
    let mut rec = Recorder::new(cfg);
    rec.record(obj, &x, 0, 0)?;

    let total = cfg.total_iterations();
    let period = cfg.inner.max(1) as u64;
    for t in 0..total {
        let (batch, block) = draw(&mut sampler, l, 1, n, cfg.block)?;
        let g = block_gradient(obj, batch.indices()[0], &x, &block, &cfg.mu)?;
        rec.evals += 2 * cfg.block as u64;
        apply_block(&mut x, &block, &g.values, cfg.decay.step(cfg.gamma0, t));
        rec.global += 1;
        if let Some(j) = block_out_of_range(&x, &block) {
            return Err(rec.diverged(format!("coordinate {j} = {}", x[j])));
        }
        if rec.due() || rec.global.is_multiple_of(period) || rec.global == total {
            let epoch = ((rec.global - 1) / period) as usize;
            let iter = (rec.global - epoch as u64 * period) as usize;
            rec.record(obj, &x, epoch, iter)?;
        }
    }
    Ok(RunOutput {
        x,
        evals: rec.evals,
        trace: rec.trace,
    })
}
