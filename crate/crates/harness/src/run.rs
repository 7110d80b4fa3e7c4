//! Experiment orchestration and output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use zovr_core::async_engine::{
    replay_check, run_async, run_simulated, AsyncOptions, DelayLaw, DelayScenario, MaskPolicy, ReplayReport, UpdateLog,
};
use zovr_core::optimizers::{run_asyszo_sequential, run_dszovr, Algorithm, RunConfig};
use zovr_core::theory::{
    certify, estimate_constants, step_settings, AnalysisSettings, Certificate, ConstantsSource, SmoothnessConstants,
};
use zovr_core::{
    make_least_squares_svm, make_logistic, make_ridge, Dataset, Error, FiniteSum, GeneratorKind, GlmObjective, Result,
    SmoothingSchedule, Trace,
};

use crate::config::{
    Backend, ConstantSetting, DelayLawKind, ExperimentConfig, GammaSetting, MaskKind, ObjectiveKind, TheoryMode,
};
use crate::rates::{Axis, Metric, RateReport};

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const RATE_REPORT: &str = "rate_report.txt";
pub const CERTIFICATE: &str = "certificate.txt";

/// Samples used when smoothness constants are estimated.
pub const ESTIMATE_TRIALS: usize = 20;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } => 2,
        Error::Infeasible(_) => 3,
        Error::Config(_) => 4,
        _ => 1,
    }
}

pub fn build_objective(cfg: &ExperimentConfig) -> Result<GlmObjective> {
    let data = match &cfg.data_csv {
        Some(p) => Dataset::load_csv(p)?,
        None => {
            let kind = match cfg.objective {
                ObjectiveKind::Logistic => GeneratorKind::GaussianLogistic,
                _ => GeneratorKind::GaussianLinear,
            };
            Dataset::synthetic(kind, cfg.samples, cfg.dim, cfg.data_seed, cfg.label_noise)
        }
    };
    match cfg.objective {
        ObjectiveKind::Ridge => make_ridge(data, cfg.lambda),
        ObjectiveKind::Logistic => make_logistic(data, cfg.lambda),
        ObjectiveKind::LeastSquaresSvm => make_least_squares_svm(data, cfg.lambda),
    }
}

/// Configured constants, with `auto` filled from the objective's analytic
/// bound where it is exact and from sampling otherwise.
pub fn resolve_constants<O: FiniteSum + ?Sized>(cfg: &ExperimentConfig, obj: &O) -> Result<SmoothnessConstants> {
    let quadratic = obj.is_quadratic();
    let needs_estimate = matches!(cfg.lipschitz, ConstantSetting::Auto) && obj.lipschitz_bound().is_none()
        || !quadratic
            && (matches!(cfg.lipschitz_tilde, ConstantSetting::Auto)
                || matches!(cfg.lipschitz_hat, ConstantSetting::Auto));
    let estimate = if needs_estimate {
        let mu = SmoothingSchedule::new(cfg.mu_vector())?;
        Some(estimate_constants(obj, &mu, ESTIMATE_TRIALS, cfg.seed)?.constants)
    } else {
        None
    };
    let l = match cfg.lipschitz {
        ConstantSetting::Value(v) => v,
        ConstantSetting::Auto => match obj.lipschitz_bound() {
            Some(v) => v,
            None => estimate.map_or(0.0, |e| e.l),
        },
    };
    let l_tilde = match cfg.lipschitz_tilde {
        ConstantSetting::Value(v) => v,
        ConstantSetting::Auto if quadratic => l,
        ConstantSetting::Auto => estimate.map_or(l, |e| e.l_tilde),
    };
    let l_hat = match cfg.lipschitz_hat {
        ConstantSetting::Value(v) => v,
        ConstantSetting::Auto if quadratic => 1.0,
        ConstantSetting::Auto => estimate.map_or(1.0, |e| e.l_hat),
    };
    Ok(SmoothnessConstants {
        l,
        l_tilde,
        l_hat,
        source: if estimate.is_some() {
            ConstantsSource::Empirical
        } else {
            ConstantsSource::Analytic
        },
    })
}

/// Staleness bound used in the analysis: the scenario's `τ` when simulated,
/// `p − 1` for `p` threads, 0 otherwise.
pub fn effective_tau(cfg: &ExperimentConfig) -> usize {
    match cfg.backend {
        Backend::Sequential => 0,
        Backend::Async => cfg.threads - 1,
        Backend::Simulated => cfg.tau,
    }
}

pub fn analysis_settings(cfg: &ExperimentConfig, constants: SmoothnessConstants) -> AnalysisSettings {
    AnalysisSettings {
        dim: cfg.dimension,
        components: cfg.components,
        block: cfg.block,
        batch: cfg.batch,
        tau: effective_tau(cfg),
        inner: cfg.inner,
        epochs: cfg.epochs,
        alpha: cfg.alpha,
        u0: cfg.u0,
        mu: cfg.mu_vector(),
        constants,
        gamma: match cfg.gamma {
            GammaSetting::Value(g) => Some(g),
            GammaSetting::Theory => None,
        },
    }
}

pub fn certify_config(cfg: &ExperimentConfig) -> Result<Certificate> {
    let obj = build_objective(cfg)?;
    let constants = resolve_constants(cfg, &obj)?;
    certify(&analysis_settings(cfg, constants))
}

/// Optimizer settings with the step size resolved.
pub fn run_config(cfg: &ExperimentConfig, gamma: f64) -> Result<RunConfig> {
    Ok(RunConfig {
        algorithm: cfg.algorithm,
        gamma,
        epochs: cfg.epochs,
        inner: cfg.inner,
        batch: cfg.batch,
        block: cfg.block,
        mu: SmoothingSchedule::new(cfg.mu_vector())?,
        seed: cfg.seed,
        gamma0: cfg.gamma0,
        decay: cfg.decay,
        iterations: cfg.iterations,
        x0: cfg.x0.clone(),
        trace_every: cfg.trace_every,
        wall_clock: cfg.wall_clock,
    })
}

pub fn scenario(cfg: &ExperimentConfig) -> Result<DelayScenario> {
    if let (DelayLawKind::Schedule, Some(path)) = (cfg.delay_law, &cfg.schedule_file) {
        let mut s = DelayScenario::load_schedule(path, cfg.tau, cfg.scenario_seed)?;
        if cfg.mask_policy == MaskKind::Random {
            s.mask_policy = MaskPolicy::Random { p_keep: cfg.mask_keep };
        } else if cfg.mask_policy == MaskKind::AllOnes {
            s.mask_policy = MaskPolicy::AllOnes;
        }
        s.validate()?;
        return Ok(s);
    }
    let s = DelayScenario {
        tau: cfg.tau,
        delay_law: match cfg.delay_law {
            DelayLawKind::None => DelayLaw::None,
            DelayLawKind::Fixed => DelayLaw::Fixed(cfg.delay),
            DelayLawKind::Uniform => DelayLaw::Uniform,
            DelayLawKind::Schedule => return Err(Error::Config("delay_law = schedule needs schedule_file".into())),
        },
        mask_policy: match cfg.mask_policy {
            MaskKind::AllOnes => MaskPolicy::AllOnes,
            MaskKind::Random => MaskPolicy::Random { p_keep: cfg.mask_keep },
            MaskKind::Schedule => return Err(Error::Config("mask_policy = schedule needs delay_law = schedule".into())),
        },
        seed: cfg.scenario_seed,
    };
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub x: Vec<f64>,
    pub trace: Trace,
    pub evals: u64,
    pub gamma: f64,
    pub report: RateReport,
    pub certificate: Option<Certificate>,
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

/// Two-column `x y` series, one file per metric and axis. Non-finite rows are dropped.
pub fn write_plot_data(dir: &Path, trace: &Trace) -> Result<()> {
    let recs = trace.records();
    let series: [(&str, Vec<f64>); 4] = [
        ("f", recs.iter().map(|r| r.f).collect()),
        ("grad_norm_sq", recs.iter().map(|r| r.grad_norm_sq).collect()),
        (Metric::Average.name(), Metric::Average.series(trace)),
        (Metric::MinSoFar.name(), Metric::MinSoFar.series(trace)),
    ];
    for axis in [Axis::Iterations, Axis::Evaluations] {
        let xs = axis.values(trace);
        for (name, ys) in &series {
            let mut f = fs::File::create(dir.join(format!("plot_{name}_{}.dat", axis.name())))?;
            for (x, y) in xs.iter().zip(ys) {
                if x.is_finite() && y.is_finite() {
                    writeln!(f, "{x} {y}")?;
                }
            }
        }
    }
    Ok(())
}

/// Runs one configured experiment and writes its run directory under `root`
/// (or the configured `out` when absolute or `root` is `None`).
pub fn run_experiment(cfg: &ExperimentConfig, root: Option<&Path>) -> Result<ExperimentOutcome> {
    let dir = cfg.output_dir(root);
    fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("key 'out': cannot create '{}': {e}", dir.display())))?;
    write(&dir, RESOLVED_CONFIG, &cfg.dump())?;
    let obj = build_objective(cfg)?;

    let mut certificate = None;
    let mut gamma = match cfg.gamma {
        GammaSetting::Value(g) => g,
        GammaSetting::Theory => f64::NAN,
    };
    let wants_theory = cfg.algorithm == Algorithm::Dszovr && cfg.theory != TheoryMode::Off;
    if wants_theory || cfg.gamma == GammaSetting::Theory {
        let constants = resolve_constants(cfg, &obj)?;
        let settings = analysis_settings(cfg, constants);
        if wants_theory {
            match certify(&settings) {
                Ok(c) => {
                    write(&dir, CERTIFICATE, &c.to_text())?;
                    certificate = Some(c);
                }
                Err(Error::Infeasible(msg)) => {
                    write(&dir, CERTIFICATE, &format!("infeasible = {msg}\n"))?;
                    if cfg.theory == TheoryMode::Enforce || cfg.gamma == GammaSetting::Theory {
                        return Err(Error::Infeasible(msg));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        if cfg.gamma == GammaSetting::Theory {
            gamma = step_settings(&settings)?.gamma;
        }
    }
    if cfg.algorithm == Algorithm::Asyszo {
        gamma = cfg.gamma0;
    }

    let rc = run_config(cfg, gamma)?;
    let result = match (cfg.backend, cfg.algorithm) {
        (Backend::Sequential, Algorithm::Dszovr) => run_dszovr(&obj, &rc).map(|o| (o.x, o.trace, o.evals, None)),
        (Backend::Sequential, Algorithm::Asyszo) => {
            run_asyszo_sequential(&obj, &rc).map(|o| (o.x, o.trace, o.evals, None))
        }
        (Backend::Async, _) => {
            run_async(&obj, &rc, &AsyncOptions::workers(cfg.threads)).map(|o| (o.x, o.trace, o.evals, None))
        }
        (Backend::Simulated, _) => {
            run_simulated(&obj, &rc, &scenario(cfg)?).map(|o| (o.x, o.trace, o.evals, Some(o.log)))
        }
    };
    let (x, trace, evals, log) = match result {
        Ok(r) => r,
        Err(e) => {
            if let Some(t) = e.partial_trace() {
                t.save_csv(&dir.join(TRACE_FILE))?;
            }
            return Err(e);
        }
    };

    trace.save_csv(&dir.join(TRACE_FILE))?;
    write_plot_data(&dir, &trace)?;
    let report = RateReport::from_trace(cfg.algorithm.name(), &trace);
    write(&dir, RATE_REPORT, &report.to_text())?;
    if let Some(log) = log {
        log.save(&dir)?;
    }
    Ok(ExperimentOutcome {
        out_dir: dir,
        x,
        trace,
        evals,
        gamma,
        report,
        certificate,
    })
}

/// Re-verifies a simulated run directory: reads `tau` from its resolved
/// config and replays its update log.
pub fn replay_dir(dir: &Path) -> Result<ReplayReport> {
    let text = fs::read_to_string(dir.join(RESOLVED_CONFIG))?;
    let tau = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "tau")
        .and_then(|(_, v)| v.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Config(format!("{RESOLVED_CONFIG} has no valid tau")))?;
    let log = UpdateLog::load(dir)?;
    let scenario = DelayScenario {
        tau,
        ..DelayScenario::none()
    };
    replay_check(&log, &scenario)
}
