//! Log-log rate fits on traces.

use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};
use zovr_core::{Error, Result, Trace};

/// Fraction of the x-range treated as burn-in and left out of every fit.
pub const BURN_IN: f64 = 0.1;
/// Fewest points a fit accepts.
pub const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Running average of `‖∇f‖²`.
    Average,
    /// Minimum so far of `‖∇f‖²`.
    MinSoFar,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Average => "avg",
            Metric::MinSoFar => "min",
        }
    }

    pub fn series(self, trace: &Trace) -> Vec<f64> {
        match self {
            Metric::Average => trace.running_average(),
            Metric::MinSoFar => trace.min_so_far(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Iterations,
    Evaluations,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Iterations => "iter",
            Axis::Evaluations => "evals",
        }
    }

    pub fn values(self, trace: &Trace) -> Vec<f64> {
        trace
            .records()
            .iter()
            .map(|r| match self {
                Axis::Iterations => r.global_iter as f64,
                Axis::Evaluations => r.evals as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub ci: f64,
    pub points: usize,
}

/// Least-squares slope of `log y` against `log x` over points with
/// `x ≥ BURN_IN · max x` and `x > 0`.
pub fn fit_rate(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() {
        return Err(Error::Fit(format!("x has {} points, y has {}", x.len(), y.len())));
    }
    let x_max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = BURN_IN * x_max;
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (&xi, &yi) in x.iter().zip(y) {
        if xi > 0.0 && xi >= start {
            if !(yi > 0.0 && yi.is_finite()) {
                return Err(Error::Fit(format!("nonpositive or non-finite value {yi} at x = {xi}")));
            }
            lx.push(xi.ln());
            ly.push(yi.ln());
        }
    }
    let n = lx.len();
    if n < MIN_POINTS {
        return Err(Error::Fit(format!("{n} points in the fit window, need at least {MIN_POINTS}")));
    }
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all x values in the window coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = (n - 2) as f64;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Fit(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        slope,
        intercept,
        ci: t * se,
        points: n,
    })
}

/// Fit of one metric on one trace against one axis.
pub fn fit_trace(trace: &Trace, metric: Metric, axis: Axis) -> Result<RateFit> {
    fit_rate(&axis.values(trace), &metric.series(trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub label: String,
    /// `(metric, axis, fit)`; failed fits carry the error message.
    pub fits: Vec<(Metric, Axis, std::result::Result<RateFit, String>)>,
    pub final_f: f64,
    pub final_grad_norm_sq: f64,
}

impl RateReport {
    pub fn from_trace(label: &str, trace: &Trace) -> Self {
        let mut fits = Vec::new();
        for metric in [Metric::Average, Metric::MinSoFar] {
            for axis in [Axis::Iterations, Axis::Evaluations] {
                fits.push((metric, axis, fit_trace(trace, metric, axis).map_err(|e| e.to_string())));
            }
        }
        let last = trace.last();
        RateReport {
            label: label.to_owned(),
            fits,
            final_f: last.map_or(f64::NAN, |r| r.f),
            final_grad_norm_sq: last.map_or(f64::NAN, |r| r.grad_norm_sq),
        }
    }

    pub fn slope(&self, metric: Metric, axis: Axis) -> Option<f64> {
        self.fits
            .iter()
            .find(|(m, a, _)| *m == metric && *a == axis)
            .and_then(|(_, _, f)| f.as_ref().ok().map(|f| f.slope))
    }

    /// `key = value` lines prefixed with the label.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.label;
        for (metric, axis, fit) in &self.fits {
            let key = format!("{p}.slope.{}.{}", metric.name(), axis.name());
            match fit {
                Ok(f) => {
                    let _ = writeln!(s, "{key} = {}", f.slope);
                    let _ = writeln!(s, "{key}.ci95 = {}", f.ci);
                    let _ = writeln!(s, "{key}.points = {}", f.points);
                }
                Err(e) => {
                    let _ = writeln!(s, "{key} = none");
                    let _ = writeln!(s, "{key}.error = {e}");
                }
            }
        }
        let _ = writeln!(s, "{p}.final_f = {}", self.final_f);
        let _ = writeln!(s, "{p}.final_grad_norm_sq = {}", self.final_grad_norm_sq);
        s
    }
}
