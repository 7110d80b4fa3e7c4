//! Run traces and telemetry.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::objectives::FiniteSum;
use crate::zo_estimator::{full_smoothed_gradient, SmoothingSchedule};

pub const TRACE_HEADER: &str = "epoch,iter,global_iter,f,grad_norm_sq,evals,wall_ms";

/// Radius for the central-difference fallback when an objective has no
/// analytic gradient.
pub const TELEMETRY_MU: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    /// Inner iterations completed within `epoch`.
    pub iter: usize,
    /// Inner iterations completed overall.
    pub global_iter: u64,
    pub f: f64,
    pub grad_norm_sq: f64,
    /// Cumulative component evaluations spent by the optimizer (telemetry excluded).
    pub evals: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    /// Appends a record. Records must have strictly increasing `global_iter`
    /// and nondecreasing `evals`.
    pub fn push(&mut self, rec: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.global_iter > last.global_iter, "trace global_iter must increase");
            assert!(rec.evals >= last.evals, "trace evaluation counter must not decrease");
        }
        self.records.push(rec);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Minimum of `grad_norm_sq` over records up to and including each one.
    pub fn min_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.min(r.grad_norm_sq);
                best
            })
            .collect()
    }

    /// Mean of `grad_norm_sq` over records up to and including each one.
    pub fn running_average(&self) -> Vec<f64> {
        let mut sum = 0.0;
        self.records
            .iter()
            .enumerate()
            .map(|(k, r)| {
                sum += r.grad_norm_sq;
                sum / (k + 1) as f64
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch, r.iter, r.global_iter, r.f, r.grad_norm_sq, r.evals, r.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header.join(",") != TRACE_HEADER {
            return Err(Error::config(format!("trace header must be '{TRACE_HEADER}'")));
        }
        let mut trace = Trace::new();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::config(format!("trace line {}: bad {what}", k + 2));
            let field = |n: usize| rec.get(n).unwrap_or("");
            let record = TraceRecord {
                epoch: field(0).parse().map_err(|_| bad("epoch"))?,
                iter: field(1).parse().map_err(|_| bad("iter"))?,
                global_iter: field(2).parse().map_err(|_| bad("global_iter"))?,
                f: field(3).parse().map_err(|_| bad("f"))?,
                grad_norm_sq: field(4).parse().map_err(|_| bad("grad_norm_sq"))?,
                evals: field(5).parse().map_err(|_| bad("evals"))?,
                wall_ms: field(6).parse().map_err(|_| bad("wall_ms"))?,
            };
            if let Some(last) = trace.last() {
                if record.global_iter <= last.global_iter || record.evals < last.evals {
                    return Err(bad("ordering"));
                }
            }
            trace.records.push(record);
        }
        Ok(trace)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Trace::read_csv(File::open(path)?)
    }
}

/// `(f(x), ‖∇f(x)‖²)` using the analytic gradient when available and dense
/// central differences with radius [`TELEMETRY_MU`] otherwise.
pub fn telemetry<O: FiniteSum + ?Sized>(obj: &O, x: &[f64]) -> Result<(f64, f64)> {
    let f = obj.value(x)?;
    let grad = match obj.gradient(x) {
        Some(g) => g,
        None => {
            let mu = SmoothingSchedule::uniform(x.len(), TELEMETRY_MU)?;
            full_smoothed_gradient(obj, x, &mu, 0)?.g_mu
        }
    };
    Ok((f, grad.iter().map(|g| g * g).sum()))
}

/// Wall clock that reads as zero when disabled, keeping traces byte-stable.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Clock {
    start: Option<Instant>,
}

impl Clock {
    pub(crate) fn new(enabled: bool) -> Self {
        Clock {
            start: enabled.then(Instant::now),
        }
    }

    pub(crate) fn ms(&self) -> u64 {
        self.start.map_or(0, |s| s.elapsed().as_millis() as u64)
    }
}
