//! Deterministic bounded-delay simulator.
//!
//! The simulator keeps one true iterate `x_t` and an update log. The vector a
//! simulated worker reads at inner iteration `t` is
//!
//! ```text
//! x̂_t = x_t + Σ_{t' ∈ K(t)} B_{t'} δ_{t'}
//! ```
//!
//! where `δ_{t'} = γ v̂_{t'}` is the update applied at `t'`, `K(t)` holds the
//! recent updates the read missed, and `B_{t'}` is the 0/1 overwrite mask
//! attached to update `t'` when it was logged. Every estimate is evaluated at
//! `x̂_t` and applied in full to `x_t`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::objectives::FiniteSum;
use crate::optimizers::{
    block_out_of_range, draw, estimate_cost, snapshot_cost, vr_estimate, Algorithm, Recorder, RunConfig,
};
use crate::sampling::{CoordinateBlock, Sampler};
use crate::trace::Trace;
use crate::zo_estimator::full_smoothed_gradient;

/// Stream of the scenario seed reserved for delay and mask draws, kept apart
/// from the batch/block stream 0 so that `τ = 0` reproduces the sequential run.
const SCENARIO_STREAM: u64 = 0x5CE7_A210;

#[derive(Debug, Clone, PartialEq)]
pub enum DelayLaw {
    /// `K(t) = ∅`.
    None,
    /// `K(t) = {t−d, …, t−1}`.
    Fixed(usize),
    /// `d ~ U{0, …, τ}` per iteration, `K(t) = {t−d, …, t−1}`.
    Uniform,
    /// Per-iteration reads indexed by global inner iteration.
    Schedule(Vec<ScheduledRead>),
}

/// Which recent updates one scheduled read misses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduledRead {
    /// The last `d` updates, `K(t) = {t−d, …, t−1}`.
    Delay(usize),
    /// Arbitrary offsets `k ≥ 1`, `K(t) = {t−k}`.
    Offsets(Vec<usize>),
}

impl ScheduledRead {
    fn staleness(&self) -> usize {
        match self {
            ScheduledRead::Delay(d) => *d,
            ScheduledRead::Offsets(o) => o.iter().copied().max().unwrap_or(0),
        }
    }

    fn offsets(&self) -> Vec<usize> {
        match self {
            ScheduledRead::Delay(d) => (1..=*d).collect(),
            ScheduledRead::Offsets(o) => o.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskPolicy {
    AllOnes,
    /// Each coordinate of an update stays pending in later reads with probability `p_keep`.
    Random { p_keep: f64 },
    /// Per-iteration mask bits indexed by global inner iteration.
    Schedule(Vec<Vec<bool>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayScenario {
    pub tau: usize,
    pub delay_law: DelayLaw,
    pub mask_policy: MaskPolicy,
    pub seed: u64,
}

impl DelayScenario {
    /// No staleness at all.
    pub fn none() -> Self {
        DelayScenario {
            tau: 0,
            delay_law: DelayLaw::None,
            mask_policy: MaskPolicy::AllOnes,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.delay_law {
            DelayLaw::None => {
                if self.mask_policy != MaskPolicy::AllOnes {
                    return Err(Error::config("mask policy must be all-ones when the delay law is none"));
                }
            }
            DelayLaw::Fixed(d) if *d > self.tau => {
                return Err(Error::config(format!("fixed delay {d} exceeds tau = {}", self.tau)));
            }
            DelayLaw::Schedule(reads) => {
                for (t, r) in reads.iter().enumerate() {
                    if r.staleness() > self.tau {
                        return Err(Error::config(format!(
                            "schedule staleness {} at t={t} exceeds tau = {}",
                            r.staleness(),
                            self.tau
                        )));
                    }
                    if let ScheduledRead::Offsets(o) = r {
                        if o.contains(&0) {
                            return Err(Error::config(format!("schedule offset 0 at t={t}; offsets start at 1")));
                        }
                    }
                }
            }
            _ => {}
        }
        if let MaskPolicy::Random { p_keep } = self.mask_policy {
            if !(0.0..=1.0).contains(&p_keep) {
                return Err(Error::config(format!("mask keep probability {p_keep} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Reads an adversarial schedule: one `t,delay,maskbits` line per
    /// iteration with `t = 0, 1, …`. `delay` is either a count `d` (miss the
    /// last `d` updates) or `@k1;k2;…`, the offsets of the missed updates.
    /// Blank lines, `#` comments and a header line are skipped. An empty
    /// `maskbits` field means all ones; if every line leaves it empty the
    /// mask policy is all-ones.
    pub fn from_schedule<R: Read>(reader: R, tau: usize, seed: u64) -> Result<Self> {
        let mut delays = Vec::new();
        let mut masks = Vec::new();
        let mut any_mask = false;
        for (k, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
                continue;
            }
            let bad = |what: &str| Error::config(format!("schedule line {}: {what}", k + 1));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(bad("expected t,delay,maskbits"));
            }
            let t: usize = fields[0].parse().map_err(|_| bad("bad t"))?;
            if t != delays.len() {
                return Err(bad("iterations must be listed in order starting at 0"));
            }
            let read = match fields[1].strip_prefix('@') {
                Some(list) => {
                    let mut o: Vec<usize> = split(list).map_err(|_| bad("bad offsets"))?;
                    o.sort_unstable();
                    o.dedup();
                    ScheduledRead::Offsets(o)
                }
                None => ScheduledRead::Delay(fields[1].parse().map_err(|_| bad("bad delay"))?),
            };
            delays.push(read);
            let bits = fields[2]
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(bad("mask bits must be 0 or 1")),
                })
                .collect::<Result<Vec<bool>>>()?;
            any_mask |= !bits.is_empty();
            masks.push(bits);
        }
        let scenario = DelayScenario {
            tau,
            delay_law: DelayLaw::Schedule(delays),
            mask_policy: if any_mask {
                MaskPolicy::Schedule(masks)
            } else {
                MaskPolicy::AllOnes
            },
            seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load_schedule(path: &Path, tau: usize, seed: u64) -> Result<Self> {
        DelayScenario::from_schedule(fs::File::open(path)?, tau, seed)
    }

    /// Offsets `k` of the updates missed by the read at global iteration `global`.
    fn offsets(&self, global: u64, rng: &mut Sampler) -> Result<Vec<usize>> {
        Ok(match &self.delay_law {
            DelayLaw::None => Vec::new(),
            DelayLaw::Fixed(d) => (1..=*d).collect(),
            DelayLaw::Uniform => (1..=rng.uniform_usize(self.tau)).collect(),
            DelayLaw::Schedule(reads) => reads
                .get(global as usize)
                .ok_or_else(|| Error::config(format!("delay schedule has no entry for t={global}")))?
                .offsets(),
        })
    }

    fn mask(&self, global: u64, len: usize, rng: &mut Sampler) -> Result<Vec<bool>> {
        match &self.mask_policy {
            MaskPolicy::AllOnes => Ok(vec![true; len]),
            MaskPolicy::Random { p_keep } => Ok((0..len).map(|_| rng.uniform_f64() < *p_keep).collect()),
            MaskPolicy::Schedule(masks) => {
                let bits = masks
                    .get(global as usize)
                    .ok_or_else(|| Error::config(format!("mask schedule has no entry for t={global}")))?;
                match bits.len() {
                    0 => Ok(vec![true; len]),
                    k if k == len => Ok(bits.clone()),
                    k => Err(Error::config(format!("mask at t={global} has {k} bits but the block has {len}"))),
                }
            }
        }
    }
}

/// One applied update and the read it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateLogEntry {
    /// Global inner-iteration index.
    pub t: u64,
    pub epoch: usize,
    pub block: Vec<usize>,
    /// `γ v̂` on the block, as applied to the true iterate.
    pub delta: Vec<f64>,
    /// Diagonal of the overwrite mask, one flag per block entry.
    pub mask: Vec<bool>,
    /// `K(t)`, global indices of the updates missing from this read.
    pub read_set: Vec<u64>,
    /// The vector the estimate was evaluated at.
    pub x_hat: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateLog {
    /// True iterate at the start of each epoch.
    pub epoch_starts: Vec<Vec<f64>>,
    pub entries: Vec<UpdateLogEntry>,
}

pub const UPDATE_LOG_HEADER: &str = "t,epoch,J,delta,mask_bits,read_set,x_hat";
pub const EPOCH_STARTS_HEADER: &str = "epoch,x";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn split<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, ()> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|p| p.parse().map_err(|_| ())).collect()
}

impl UpdateLog {
    /// CSV, one entry per line; list-valued fields are `;`-separated.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{UPDATE_LOG_HEADER}")?;
        for e in &self.entries {
            let bits: String = e.mask.iter().map(|&b| if b { '1' } else { '0' }).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.t,
                e.epoch,
                join(&e.block),
                join(&e.delta),
                bits,
                join(&e.read_set),
                join(&e.x_hat)
            )?;
        }
        Ok(())
    }

    pub fn write_epoch_starts<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{EPOCH_STARTS_HEADER}")?;
        for (s, x) in self.epoch_starts.iter().enumerate() {
            writeln!(w, "{s},{}", join(x))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read, S: Read>(entries: R, epoch_starts: S) -> Result<Self> {
        let mut log = UpdateLog::default();
        for (k, line) in BufReader::new(epoch_starts).lines().enumerate() {
            let line = line?;
            if k == 0 {
                if line.trim() != EPOCH_STARTS_HEADER {
                    return Err(Error::config(format!("epoch starts header must be '{EPOCH_STARTS_HEADER}'")));
                }
                continue;
            }
            let bad = || Error::config(format!("epoch starts line {}: malformed", k + 1));
            let (s, x) = line.split_once(',').ok_or_else(bad)?;
            if s.parse::<usize>().map_err(|_| bad())? != log.epoch_starts.len() {
                return Err(bad());
            }
            log.epoch_starts.push(split(x).map_err(|_| bad())?);
        }
        for (k, line) in BufReader::new(entries).lines().enumerate() {
            let line = line?;
            if k == 0 {
                if line.trim() != UPDATE_LOG_HEADER {
                    return Err(Error::config(format!("update log header must be '{UPDATE_LOG_HEADER}'")));
                }
                continue;
            }
            let bad = |what: &str| Error::config(format!("update log line {}: bad {what}", k + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("field count"));
            }
            log.entries.push(UpdateLogEntry {
                t: f[0].parse().map_err(|_| bad("t"))?,
                epoch: f[1].parse().map_err(|_| bad("epoch"))?,
                block: split(f[2]).map_err(|_| bad("J"))?,
                delta: split(f[3]).map_err(|_| bad("delta"))?,
                mask: f[4]
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(bad("mask_bits")),
                    })
                    .collect::<Result<_>>()?,
                read_set: split(f[5]).map_err(|_| bad("read_set"))?,
                x_hat: split(f[6]).map_err(|_| bad("x_hat"))?,
            });
        }
        Ok(log)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.write_csv(fs::File::create(dir.join("update_log.csv"))?)?;
        self.write_epoch_starts(fs::File::create(dir.join("epoch_starts.csv"))?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        UpdateLog::read_csv(
            fs::File::open(dir.join("update_log.csv"))?,
            fs::File::open(dir.join("epoch_starts.csv"))?,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub x: Vec<f64>,
    pub trace: Trace,
    pub log: UpdateLog,
    pub evals: u64,
}

/// Runs DSZOVR under the scenario's delay and mask model.
pub fn run_simulated<O: FiniteSum + ?Sized>(obj: &O, cfg: &RunConfig, scenario: &DelayScenario) -> Result<SimulationOutput> {
    if cfg.algorithm != Algorithm::Dszovr {
        return Err(Error::config("run_simulated needs algorithm = dszovr"));
    }
    scenario.validate()?;
    cfg.validate(obj)?;
    let (n, l) = (obj.dim(), obj.num_components());
    let mut x = cfg.start_point(n);
    let mut sampler = Sampler::new(cfg.seed, 0);
    let mut scenario_rng = Sampler::new(scenario.seed, SCENARIO_STREAM);
    let mut rec = Recorder::new(cfg);
    let mut log = UpdateLog::default();
    rec.record(obj, &x, 0, 0)?;

    for s in 0..cfg.epochs {
        let snap = full_smoothed_gradient(obj, &x, &cfg.mu, s)?;
        rec.evals += snapshot_cost(n, l);
        log.epoch_starts.push(x.clone());
        let first = log.entries.len();
        for t in 0..cfg.inner {
            let global = rec.global;
            let offsets = scenario.offsets(global, &mut scenario_rng)?;
            if let Some(&k) = offsets.iter().find(|&&k| k > scenario.tau) {
                return Err(Error::config(format!("realized staleness {k} at t={global} exceeds tau")));
            }
            let mut read_set: Vec<u64> = offsets
                .iter()
                .filter(|&&k| k <= t)
                .map(|&k| global - k as u64)
                .collect();
            read_set.sort_unstable();
            let mut x_hat = x.clone();
            for &tp in &read_set {
                let e = &log.entries[first + (tp - log.entries[first].t) as usize];
                for ((&j, &d), &keep) in e.block.iter().zip(&e.delta).zip(&e.mask) {
                    if keep {
                        x_hat[j] += d;
                    }
                }
            }

            let (batch, block) = draw(&mut sampler, l, cfg.batch, n, cfg.block)?;
            let v = vr_estimate(obj, &x_hat, &snap, &batch, &block, &cfg.mu, s, t)?;
            rec.evals += estimate_cost(cfg.batch, cfg.block);
            let delta: Vec<f64> = v.values.iter().map(|vj| cfg.gamma * vj).collect();
            for (&j, &d) in block.indices().iter().zip(&delta) {
                x[j] -= d;
            }
            let mask = scenario.mask(global, block.len(), &mut scenario_rng)?;
            log.entries.push(UpdateLogEntry {
                t: global,
                epoch: s,
                block: block.indices().to_vec(),
                delta,
                mask,
                read_set,
                x_hat,
            });
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
    Ok(SimulationOutput {
        x,
        evals: rec.evals,
        trace: rec.trace,
        log,
    })
}

/// Absolute tolerance on `|x̂_t − (x_t + Σ B δ)|` in [`replay_check`].
pub const REPLAY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub entries: usize,
    pub max_reconstruction_error: f64,
    pub max_staleness: u64,
    pub tau: usize,
}

impl ReplayReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "entries = {}", self.entries);
        let _ = writeln!(s, "max_reconstruction_error = {:e}", self.max_reconstruction_error);
        let _ = writeln!(s, "max_staleness = {}", self.max_staleness);
        let _ = writeln!(s, "tau = {}", self.tau);
        s
    }
}

/// Rebuilds `x_t` from each epoch start and the logged deltas, recomputes every
/// read as `x_t + Σ_{t'∈K(t)} B_{t'} δ_{t'}` and compares it with the logged
/// `x̂_t`. Also checks `t − min K(t) ≤ τ`, that reads only reference earlier
/// updates of the same epoch, and that consecutive epochs chain.
pub fn replay_check(log: &UpdateLog, scenario: &DelayScenario) -> Result<ReplayReport> {
    let mut max_err = 0.0f64;
    let mut max_staleness = 0u64;
    let mut idx = 0usize;
    let entries = &log.entries;
    for (s, start) in log.epoch_starts.iter().enumerate() {
        let mut x = start.clone();
        let first = idx;
        while idx < entries.len() && entries[idx].epoch == s {
            let e = &entries[idx];
            let fail = |message: String| Error::Verification { t: e.t, message };
            if idx > first && e.t != entries[idx - 1].t + 1 {
                return Err(fail("iteration indices are not consecutive".into()));
            }
            if e.block.len() != e.delta.len() || e.block.len() != e.mask.len() {
                return Err(fail("block, delta and mask lengths differ".into()));
            }
            if e.x_hat.len() != x.len() || e.block.iter().any(|&j| j >= x.len()) {
                return Err(fail("dimension mismatch".into()));
            }
            let mut recon = x.clone();
            for &tp in &e.read_set {
                if tp >= e.t || tp < entries[first].t {
                    return Err(fail(format!("read set references t'={tp} outside this epoch's past")));
                }
                let prior = &entries[first + (tp - entries[first].t) as usize];
                for ((&j, &d), &keep) in prior.block.iter().zip(&prior.delta).zip(&prior.mask) {
                    if keep {
                        recon[j] += d;
                    }
                }
            }
            if let Some(&oldest) = e.read_set.iter().min() {
                let staleness = e.t - oldest;
                if staleness > scenario.tau as u64 {
                    return Err(fail(format!("staleness {staleness} exceeds tau = {}", scenario.tau)));
                }
                max_staleness = max_staleness.max(staleness);
            }
            let err = recon
                .iter()
                .zip(&e.x_hat)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if err.is_nan() || err > REPLAY_TOLERANCE {
                return Err(fail(format!("read reconstruction error {err:e}")));
            }
            max_err = max_err.max(err);
            for (&j, &d) in e.block.iter().zip(&e.delta) {
                x[j] -= d;
            }
            idx += 1;
        }
        if let Some(next) = log.epoch_starts.get(s + 1) {
            if *next != x {
                let t = if idx > 0 { entries[idx - 1].t } else { 0 };
                return Err(Error::Verification {
                    t,
                    message: format!("epoch {} does not start where epoch {s} ended", s + 1),
                });
            }
        }
    }
    if idx != entries.len() {
        return Err(Error::Verification {
            t: entries[idx].t,
            message: "entry belongs to no logged epoch".into(),
        });
    }
    Ok(ReplayReport {
        entries: entries.len(),
        max_reconstruction_error: max_err,
        max_staleness,
        tau: scenario.tau,
    })
}

/// Block of a log entry as a typed coordinate block.
pub fn entry_block(e: &UpdateLogEntry, dim: usize) -> Result<CoordinateBlock> {
    CoordinateBlock::new(e.block.clone(), dim)
}
