//! Convergence constants and feasibility checks for the doubly stochastic
//! variance-reduced method.
//!
//! Everything here follows the estimator scaling used by the rest of the
//! crate: a block estimate is multiplied by `N/Y`, so the full smoothed
//! gradient is unscaled and block estimates are unbiased for it.

use std::collections::BTreeMap;
use std::f64::consts::E;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::objectives::FiniteSum;
use crate::trace::TELEMETRY_MU;
use crate::zo_estimator::{component_diffs, full_smoothed_gradient, SmoothingSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantsSource {
    Analytic,
    Empirical,
}

impl ConstantsSource {
    pub fn name(self) -> &'static str {
        match self {
            ConstantsSource::Analytic => "analytic",
            ConstantsSource::Empirical => "empirical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessConstants {
    /// Lipschitz constant of every `∇f_i`.
    pub l: f64,
    /// Lipschitz constant of the mixtured (per-coordinate smoothed) gradient.
    pub l_tilde: f64,
    /// Bound on the mixtured gradient's norm relative to `‖∇f‖`.
    pub l_hat: f64,
    pub source: ConstantsSource,
}

impl SmoothnessConstants {
    pub fn analytic(l: f64, l_tilde: f64, l_hat: f64) -> Self {
        SmoothnessConstants {
            l,
            l_tilde,
            l_hat,
            source: ConstantsSource::Analytic,
        }
    }
}

/// Problem sizes and step-size parameters for the analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    /// `N`
    pub dim: usize,
    /// `l`
    pub components: usize,
    /// `Y`
    pub block: usize,
    /// `b`
    pub batch: usize,
    pub tau: usize,
    /// `m`
    pub inner: usize,
    /// `S`
    pub epochs: usize,
    pub alpha: f64,
    pub u0: f64,
    /// Smoothing radii; zeros are accepted here as the exact-gradient limit.
    pub mu: Vec<f64>,
    pub constants: SmoothnessConstants,
    /// Step size to analyse. `None` uses `u₀b/(L̃ l^α)`.
    pub gamma: Option<f64>,
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        let c = &self.constants;
        if self.dim == 0 || self.components == 0 {
            return Err(Error::config("N and l must be positive"));
        }
        if self.block == 0 || self.block > self.dim {
            return Err(Error::config(format!("Y must satisfy 1 <= Y <= N (Y = {}, N = {})", self.block, self.dim)));
        }
        if self.batch == 0 || self.batch > self.components {
            return Err(Error::config(format!(
                "b must satisfy 1 <= b <= l (b = {}, l = {})",
                self.batch, self.components
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.u0 > 0.0 && self.u0 < 1.0) {
            return Err(Error::config(format!("u0 must lie in (0, 1), got {}", self.u0)));
        }
        if self.mu.len() != self.dim {
            return Err(Error::config(format!("mu has {} entries, expected N = {}", self.mu.len(), self.dim)));
        }
        if self.mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::config("mu entries must be finite and nonnegative"));
        }
        for (name, v) in [("L", c.l), ("L_tilde", c.l_tilde), ("L_hat", c.l_hat)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        match self.gamma {
            Some(g) if !(g.is_finite() && g >= 0.0) => {
                return Err(Error::config(format!("gamma must be finite and nonnegative, got {g}")));
            }
            None if c.l_tilde <= 0.0 => {
                return Err(Error::config("the default step size needs L_tilde > 0"));
            }
            _ => {}
        }
        Ok(())
    }

    fn n(&self) -> f64 {
        self.dim as f64
    }

    fn y(&self) -> f64 {
        self.block as f64
    }

    fn b(&self) -> f64 {
        self.batch as f64
    }

    fn tau2(&self) -> f64 {
        (self.tau as f64).powi(2)
    }

    /// `l^α`
    pub fn l_alpha(&self) -> f64 {
        (self.components as f64).powf(self.alpha)
    }

    /// `u₀b/(L̃ l^α)`
    pub fn default_gamma(&self) -> f64 {
        self.u0 * self.b() / (self.constants.l_tilde * self.l_alpha())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.default_gamma())
    }

    /// `Y − 2N L̃² γ² τ²`
    pub fn delay_margin(&self) -> f64 {
        let lt = self.constants.l_tilde;
        let g = self.gamma();
        self.y() - 2.0 * self.n() * lt * lt * g * g * self.tau2()
    }

    /// Largest step size keeping the delay margin positive; infinite when `τ = 0` or `L̃ = 0`.
    pub fn gamma_limit(&self) -> f64 {
        let lt = self.constants.l_tilde;
        if self.tau == 0 || lt == 0.0 {
            return f64::INFINITY;
        }
        (self.y() / (2.0 * self.n() * self.tau2())).sqrt() / lt
    }

    fn feasible_margin(&self) -> Result<f64> {
        self.validate()?;
        let margin = self.delay_margin();
        if margin > 0.0 {
            Ok(margin)
        } else {
            Err(Error::Infeasible(format!(
                "delay condition Y - 2*N*L_tilde^2*gamma^2*tau^2 > 0 violated: {margin:e} with gamma = {:e}, tau = {} \
                 (gamma must be below {:e})",
                self.gamma(),
                self.tau,
                self.gamma_limit()
            )))
        }
    }

    /// Bracketed factor shared by the `c_t` and `Γ_t` recursions, for a given `c_{t+1}`.
    fn bracket(&self, c_next: f64) -> f64 {
        let l = self.constants.l;
        let (n, y, g) = (self.n(), self.y(), self.gamma());
        c_next * n * g * g / y + l * y * g * g / (2.0 * n) + g.powi(3) * n * l * l * self.tau2() / y
    }
}

/// `ω = L² Σ_j μ_j² / N`.
pub fn compute_omega(l: f64, mu: &[f64], dim: usize) -> f64 {
    l * l * mu.iter().map(|m| m * m).sum::<f64>() / dim as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    pub gamma: f64,
    /// Constant `β = L̃N²/Y`.
    pub beta: f64,
    /// `⌊Y l^α/(5u₀bN²)⌋`, often 0 for small problems.
    pub m_suggested: usize,
    pub theta: f64,
    pub delay_margin: f64,
}

/// Step size, `β`, `θ` and the suggested inner-loop length.
pub fn step_settings(s: &AnalysisSettings) -> Result<StepSettings> {
    let margin = s.feasible_margin()?;
    let lt = s.constants.l_tilde;
    let (n, y, b, g) = (s.n(), s.y(), s.b(), s.gamma());
    let beta = lt * n * n / y;
    let theta = g * beta + 4.0 * n * n * g * g * lt * lt / (b * margin);
    let m = y * s.l_alpha() / (5.0 * s.u0 * b * n * n);
    Ok(StepSettings {
        gamma: g,
        beta,
        m_suggested: m.floor() as usize,
        theta,
        delay_margin: margin,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CSequence {
    /// `c_0, …, c_m` with `c_m = 0`.
    pub c: Vec<f64>,
    /// `Γ_0, …, Γ_{m−1}`.
    pub gamma_t: Vec<f64>,
    pub beta: f64,
    /// `β ≥ 2c_{t+1}` for every `t < m`.
    pub beta_ok: bool,
}

impl CSequence {
    pub fn c0(&self) -> f64 {
        self.c[0]
    }

    /// `min_t Γ_t`, `None` when `m = 0`.
    pub fn min_gamma(&self) -> Option<f64> {
        self.gamma_t.iter().copied().reduce(f64::min)
    }
}

/// Backward recursion for the potential weights `c_t` and the descent margins `Γ_t`
/// over `settings.inner` steps.
pub fn c_sequence(s: &AnalysisSettings) -> Result<CSequence> {
    c_sequence_with(s, s.inner)
}

fn c_sequence_with(s: &AnalysisSettings, m: usize) -> Result<CSequence> {
    let margin = s.feasible_margin()?;
    let k = &s.constants;
    let (n, y, b, g) = (s.n(), s.y(), s.b(), s.gamma());
    let beta = k.l_tilde * n * n / y;
    let c_weight = 4.0 * y * n * k.l_tilde * k.l_tilde / (b * margin);
    let g_weight = 4.0 * y * k.l_hat / margin;
    let mut c = vec![0.0; m + 1];
    let mut gamma_t = vec![0.0; m];
    for t in (0..m).rev() {
        let bracket = s.bracket(c[t + 1]);
        c[t] = c[t + 1] * (1.0 + g * beta) + bracket * c_weight;
        gamma_t[t] = g / 2.0 - bracket * g_weight;
    }
    let beta_ok = c.iter().skip(1).all(|&ci| beta >= 2.0 * ci);
    Ok(CSequence { c, gamma_t, beta, beta_ok })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Vacuous,
}

impl CheckStatus {
    pub fn name(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Vacuous => "vacuous",
        }
    }
}

/// A reported inequality `lhs <= rhs` (or `lhs > rhs` for strict positivity checks).
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub relation: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub status: CheckStatus,
    pub note: Option<String>,
}

impl Check {
    fn le(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Check::new(name, "<=", lhs, rhs, lhs <= rhs)
    }

    fn lt(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Check::new(name, "<", lhs, rhs, lhs < rhs)
    }

    fn ge(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Check::new(name, ">=", lhs, rhs, lhs >= rhs)
    }

    fn gt(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Check::new(name, ">", lhs, rhs, lhs > rhs)
    }

    fn new(name: &'static str, relation: &'static str, lhs: f64, rhs: f64, ok: bool) -> Self {
        Check {
            name,
            relation,
            lhs,
            rhs,
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            note: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }

    /// Signed slack: positive when the inequality holds.
    pub fn margin(&self) -> f64 {
        match self.relation {
            "<=" | "<" => self.rhs - self.lhs,
            _ => self.lhs - self.rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub settings: AnalysisSettings,
    pub omega: f64,
    pub steps: StepSettings,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub sigma: f64,
    /// Recursion over the configured `m`.
    pub sequence: CSequence,
    /// `c₀` of the recursion run with `m = m_suggested`, when that is at least 1.
    pub c0_suggested: Option<f64>,
    pub checks: Vec<Check>,
}

/// Full constant evaluation with every inequality reported.
pub fn certify(s: &AnalysisSettings) -> Result<Certificate> {
    let steps = step_settings(s)?;
    let k = &s.constants;
    let (n, y, b, g) = (s.n(), s.y(), s.b(), steps.gamma);
    let (l, tau2) = (k.l, s.tau2());
    let omega = compute_omega(l, &s.mu, s.dim);

    let rho1 = ((2.0 * l * y * y / n + 4.0 * n * l * l * tau2 * s.u0 * b) / (5.0 * n)) * (E - 1.0);
    let rho2 = 4.0 * y * k.l_hat / steps.delay_margin;
    let rho3 = 0.5 - rho1 * n * rho2 * g / y - l * y * rho2 * g / (2.0 * n) - rho2 * n * l * l * tau2 * g * g / y;
    let sigma = rho3 * s.u0;

    let sequence = c_sequence(s)?;
    let c0_suggested = if steps.m_suggested >= 1 {
        Some(c_sequence_with(s, steps.m_suggested)?.c0())
    } else {
        None
    };

    let mut checks = vec![
        Check::gt("delay_margin_positive", steps.delay_margin, 0.0),
        Check::lt("batch_below_l_alpha", b, s.l_alpha()),
        match c0_suggested {
            Some(c0) => Check::le("c0_bound", c0, rho1),
            None => Check {
                status: CheckStatus::Vacuous,
                note: Some("m_suggested = 0".into()),
                ..Check::le("c0_bound", f64::NAN, rho1)
            },
        },
        Check::le("theta_bound", steps.theta, 5.0 * s.u0 * b * n * n / (y * s.l_alpha())),
    ];
    let mut rho3_check = Check::gt("rho3_positive", rho3, 0.0);
    if !rho3_check.passed() {
        rho3_check.note = Some("u0 too large".into());
    }
    checks.push(rho3_check);
    let beta_rhs = 2.0 * sequence.c.get(1).copied().unwrap_or(0.0);
    checks.push(Check::ge("beta_vs_2c1", steps.beta, beta_rhs));
    match sequence.min_gamma() {
        Some(g0) => {
            checks.push(Check::gt("gamma_t_positive", g0, 0.0));
            let floor = sigma * b / (k.l_tilde * s.l_alpha());
            checks.push(Check::ge("gamma_t_lower_bound", g0, floor));
        }
        None => {
            for name in ["gamma_t_positive", "gamma_t_lower_bound"] {
                checks.push(Check {
                    status: CheckStatus::Vacuous,
                    note: Some("m = 0".into()),
                    ..Check::gt(name, f64::NAN, 0.0)
                });
            }
        }
    }

    Ok(Certificate {
        settings: s.clone(),
        omega,
        steps,
        rho1,
        rho2,
        rho3,
        sigma,
        sequence,
        c0_suggested,
        checks,
    })
}

impl Certificate {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Optimization term `L̃ l^α gap/(σbT)` of the bound. `None` when `σ ≤ 0` or `T = 0`.
    pub fn optimization_term(&self, iterations: u64, gap: f64) -> Option<f64> {
        if self.sigma <= 0.0 || iterations == 0 {
            return None;
        }
        let s = &self.settings;
        Some(s.constants.l_tilde * s.l_alpha() * gap / (self.sigma * s.b() * iterations as f64))
    }

    /// Bound on the average squared gradient norm after `T` iterations:
    /// `L̃ l^α gap/(σbT) + N u₀ ω/(4σ)`.
    pub fn predicted_bound(&self, iterations: u64, gap: f64) -> Option<f64> {
        let s = &self.settings;
        self.optimization_term(iterations, gap)
            .map(|opt| opt + s.n() * s.u0 * self.omega / (4.0 * self.sigma))
    }

    /// Flat `key = value` report, one quantity per line.
    pub fn to_text(&self) -> String {
        let s = &self.settings;
        let k = &s.constants;
        let mut out = String::new();
        let mut kv = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        kv("N", s.dim.to_string());
        kv("l", s.components.to_string());
        kv("Y", s.block.to_string());
        kv("b", s.batch.to_string());
        kv("tau", s.tau.to_string());
        kv("m", s.inner.to_string());
        kv("S", s.epochs.to_string());
        kv("alpha", num(s.alpha));
        kv("u0", num(s.u0));
        kv("L", num(k.l));
        kv("L_tilde", num(k.l_tilde));
        kv("L_hat", num(k.l_hat));
        kv("constants_source", k.source.name().into());
        kv("gamma", num(self.steps.gamma));
        kv("gamma_source", if s.gamma.is_some() { "configured" } else { "default" }.into());
        kv("gamma_limit", num(s.gamma_limit()));
        kv("delay_margin", num(self.steps.delay_margin));
        kv("beta", num(self.steps.beta));
        kv("theta", num(self.steps.theta));
        kv("m_suggested", self.steps.m_suggested.to_string());
        kv("omega", num(self.omega));
        kv("rho1", num(self.rho1));
        kv("rho2", num(self.rho2));
        kv("rho3", num(self.rho3));
        kv("sigma", num(self.sigma));
        kv("c0", num(self.sequence.c0()));
        kv("c1", num(self.sequence.c.get(1).copied().unwrap_or(0.0)));
        kv(
            "c0_suggested",
            self.c0_suggested.map_or_else(|| "none".into(), num),
        );
        kv(
            "gamma_t_min",
            self.sequence.min_gamma().map_or_else(|| "none".into(), num),
        );
        kv("beta_ok", self.sequence.beta_ok.to_string());
        let t = s.epochs as u64 * s.inner as u64;
        kv(
            "bound_bias_term",
            if self.sigma > 0.0 {
                num(s.n() * s.u0 * self.omega / (4.0 * self.sigma))
            } else {
                "none".into()
            },
        );
        kv(
            "bound_per_unit_gap",
            self.optimization_term(t, 1.0).map_or_else(|| "none".into(), num),
        );
        for c in &self.checks {
            let mut line = format!(
                "{} ({} {} {}, margin {})",
                c.status.name(),
                num(c.lhs),
                c.relation,
                num(c.rhs),
                num(c.margin())
            );
            if let Some(note) = &c.note {
                line.push_str(": ");
                line.push_str(note);
            }
            kv(&format!("check.{}", c.name), line);
        }
        kv(
            "note.variance_factor",
            "uses the stated 2*N*L_tilde^2/b factor; the derivation's last step gives 2*L_tilde^2/b".into(),
        );
        kv("note.scaling", "block estimates scaled by N/Y; full smoothed gradient unscaled".into());
        kv("all_passed", self.all_passed().to_string());
        out
    }
}

/// Plain decimal for moderate magnitudes, exponent notation otherwise.
fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && !(1e-5..1e15).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Parses a flat `key = value` report back into a map.
pub fn parse_report(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|line| line.split_once(" = "))
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantEstimate {
    pub constants: SmoothnessConstants,
    /// The objective's own bound on `L`, when it has one.
    pub analytic_l: Option<f64>,
    pub trials: usize,
}

/// Sampled lower bounds on `L`, `L̃` and `L̂` from `trials` Gaussian point pairs.
///
/// `L` uses analytic component gradients when available and small-radius
/// central differences otherwise; `L̃` uses the component central-difference
/// fields at radius `mu`; `L̂` is the largest `‖g_μ(x)‖/‖∇f(x)‖`.
pub fn estimate_constants<O: FiniteSum + ?Sized>(
    obj: &O,
    mu: &SmoothingSchedule,
    trials: usize,
    seed: u64,
) -> Result<ConstantEstimate> {
    if trials < 2 {
        return Err(Error::config(format!("estimate_constants needs trials >= 2, got {trials}")));
    }
    let n = obj.dim();
    if mu.dim() != n {
        return Err(Error::config(format!("mu has dimension {}, objective has {n}", mu.dim())));
    }
    let fine = SmoothingSchedule::uniform(n, TELEMETRY_MU)?;
    let exact = |i: usize, x: &[f64]| -> Result<Vec<f64>> {
        match obj.component_gradient(i, x) {
            Some(g) => Ok(g),
            None => component_diffs(obj, i, x, &fine),
        }
    };
    let full = |x: &[f64]| -> Result<Vec<f64>> {
        match obj.gradient(x) {
            Some(g) => Ok(g),
            None => Ok(full_smoothed_gradient(obj, x, &fine, 0)?.g_mu),
        }
    };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let norm = |a: &[f64]| a.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let (mut l, mut l_tilde, mut l_hat) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let x = point();
        let y = point();
        let gap = dist(&x, &y);
        if gap == 0.0 {
            continue;
        }
        for i in 0..obj.num_components() {
            l = l.max(dist(&exact(i, &x)?, &exact(i, &y)?) / gap);
            l_tilde = l_tilde.max(dist(&component_diffs(obj, i, &x, mu)?, &component_diffs(obj, i, &y, mu)?) / gap);
        }
        let smoothed = norm(&full_smoothed_gradient(obj, &x, mu, 0)?.g_mu);
        let true_norm = norm(&full(&x)?);
        if true_norm > 0.0 {
            l_hat = l_hat.max(smoothed / true_norm);
        }
    }
    Ok(ConstantEstimate {
        constants: SmoothnessConstants {
            l,
            l_tilde,
            l_hat,
            source: ConstantsSource::Empirical,
        },
        analytic_l: obj.lipschitz_bound(),
        trials,
    })
}
