//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use zovr_core::optimizers::{Algorithm, StepDecay};
use zovr_core::{Dataset, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Ridge,
    Logistic,
    LeastSquaresSvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Sequential,
    Async,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoryMode {
    Off,
    /// Write a certificate, never block the run.
    Report,
    /// Refuse to run when the delay condition fails.
    Enforce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSetting {
    Value(f64),
    /// `u₀b/(L̃ l^α)` from the analysis module.
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstantSetting {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayLawKind {
    None,
    Fixed,
    Uniform,
    Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    AllOnes,
    Random,
    Schedule,
}

/// Every recognised key with its default, in dump order. `None` marks a required key.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("objective", None),
    ("samples", Some("500")),
    ("dim", Some("20")),
    ("lambda", Some("0.01")),
    ("data_seed", Some("42")),
    ("label_noise", Some("1")),
    ("data_csv", Some("")),
    ("algorithm", Some("dszovr")),
    ("gamma", Some("0.001")),
    ("u0", Some("0.1")),
    ("alpha", Some("0.5")),
    ("gamma0", Some("0.02")),
    ("decay", Some("inv_sqrt")),
    ("iterations", Some("auto")),
    ("epochs", Some("10")),
    ("inner", Some("500")),
    ("batch", Some("1")),
    ("block", Some("20")),
    ("mu", Some("0.01")),
    ("seed", Some("0")),
    ("x0", Some("zeros")),
    ("backend", Some("sequential")),
    ("threads", Some("1")),
    ("tau", Some("0")),
    ("delay_law", Some("none")),
    ("delay", Some("0")),
    ("mask_policy", Some("all_ones")),
    ("mask_keep", Some("1")),
    ("schedule_file", Some("")),
    ("scenario_seed", Some("0")),
    ("theory", Some("report")),
    ("lipschitz", Some("auto")),
    ("lipschitz_tilde", Some("auto")),
    ("lipschitz_hat", Some("auto")),
    ("trace_every", Some("100")),
    ("wall_clock", Some("false")),
    ("out", Some("run")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub objective: ObjectiveKind,
    pub samples: usize,
    pub dim: usize,
    pub lambda: f64,
    pub data_seed: u64,
    pub label_noise: f64,
    pub data_csv: Option<PathBuf>,
    pub algorithm: Algorithm,
    pub gamma: GammaSetting,
    pub u0: f64,
    pub alpha: f64,
    pub gamma0: f64,
    pub decay: StepDecay,
    pub iterations: Option<u64>,
    pub epochs: usize,
    pub inner: usize,
    pub batch: usize,
    pub block: usize,
    /// One radius for every coordinate, or one per coordinate.
    pub mu: Vec<f64>,
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
    pub backend: Backend,
    pub threads: usize,
    pub tau: usize,
    pub delay_law: DelayLawKind,
    pub delay: usize,
    pub mask_policy: MaskKind,
    pub mask_keep: f64,
    pub schedule_file: Option<PathBuf>,
    pub scenario_seed: u64,
    pub theory: TheoryMode,
    pub lipschitz: ConstantSetting,
    pub lipschitz_tilde: ConstantSetting,
    pub lipschitz_hat: ConstantSetting,
    pub trace_every: u64,
    pub wall_clock: bool,
    /// Output directory as written; see [`ExperimentConfig::output_dir`].
    pub out: PathBuf,
    /// Number of components `l`, from the data.
    pub components: usize,
    /// Dimension `N`, from the data.
    pub dimension: usize,
}

struct Raw {
    values: BTreeMap<String, (String, Option<usize>)>,
}

impl Raw {
    fn get(&self, key: &str) -> &str {
        &self.values[key].0
    }

    fn err(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        match self.values.get(key).and_then(|(_, line)| *line) {
            Some(line) => Error::Config(format!("line {line}: key '{key}': {msg}")),
            None => Error::Config(format!("key '{key}' (default): {msg}")),
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| self.err(key, format!("cannot parse '{v}'")))
    }

    fn real(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(key, "must be finite"))
        }
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> Result<T> {
        let v = self.get(key);
        options.iter().find(|(n, _)| *n == v).map(|(_, t)| *t).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            self.err(key, format!("'{v}' is not one of {}", names.join(", ")))
        })
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        self.get(key)
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.err(key, format!("bad list entry '{}'", p.trim())))
            })
            .collect()
    }

    fn constant(&self, key: &str) -> Result<ConstantSetting> {
        if self.get(key) == "auto" {
            return Ok(ConstantSetting::Auto);
        }
        let v = self.real(key)?;
        if v <= 0.0 {
            return Err(self.err(key, "must be positive or 'auto'"));
        }
        Ok(ConstantSetting::Value(v))
    }

    fn path(&self, key: &str, base: &Path) -> Result<Option<PathBuf>> {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(None);
        }
        let p = base.join(v);
        if !p.is_file() {
            return Err(self.err(key, format!("file '{}' does not exist", p.display())));
        }
        Ok(Some(p.canonicalize()?))
    }
}

/// Fills defaults into `key = value` text and validates it. Relative file
/// paths are resolved against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut values: BTreeMap<String, (String, Option<usize>)> = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let n = k + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {n}: expected 'key = value'")))?;
        let key = key.trim();
        if !KEYS.iter().any(|(name, _)| *name == key) {
            return Err(Error::Config(format!("line {n}: unknown key '{key}'")));
        }
        if let Some((_, Some(prev))) = values.get(key) {
            return Err(Error::Config(format!("line {n}: key '{key}' already set on line {prev}")));
        }
        values.insert(key.to_owned(), (value.trim().to_owned(), Some(n)));
    }
    for (key, default) in KEYS {
        if !values.contains_key(*key) {
            match default {
                Some(d) => {
                    values.insert((*key).to_owned(), ((*d).to_owned(), None));
                }
                None => return Err(Error::Config(format!("missing required key '{key}'"))),
            }
        }
    }
    resolve(&Raw { values }, base)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config '{}': {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

fn resolve(raw: &Raw, base: &Path) -> Result<ExperimentConfig> {
    let objective = raw.choice(
        "objective",
        &[
            ("ridge", ObjectiveKind::Ridge),
            ("logistic", ObjectiveKind::Logistic),
            ("lssvm", ObjectiveKind::LeastSquaresSvm),
        ],
    )?;
    let samples: usize = raw.parse("samples")?;
    let dim: usize = raw.parse("dim")?;
    let lambda = raw.real("lambda")?;
    if lambda < 0.0 {
        return Err(raw.err("lambda", "must be nonnegative"));
    }
    let label_noise = raw.real("label_noise")?;
    if label_noise < 0.0 {
        return Err(raw.err("label_noise", "must be nonnegative"));
    }
    let data_csv = raw.path("data_csv", base)?;
    let (components, dimension) = match &data_csv {
        Some(p) => {
            let d = Dataset::load_csv(p).map_err(|e| raw.err("data_csv", e))?;
            (d.num_samples(), d.dim())
        }
        None => {
            if samples == 0 {
                return Err(raw.err("samples", "l must be at least 1"));
            }
            if dim == 0 {
                return Err(raw.err("dim", "N must be at least 1"));
            }
            (samples, dim)
        }
    };

    let algorithm = raw.choice("algorithm", &[("dszovr", Algorithm::Dszovr), ("asyszo", Algorithm::Asyszo)])?;
    let gamma = if raw.get("gamma") == "theory" {
        GammaSetting::Theory
    } else {
        let g = raw.real("gamma")?;
        if g <= 0.0 {
            return Err(raw.err("gamma", "step size must be positive or 'theory'"));
        }
        GammaSetting::Value(g)
    };
    let u0 = raw.real("u0")?;
    if !(u0 > 0.0 && u0 < 1.0) {
        return Err(raw.err("u0", "must lie in (0, 1)"));
    }
    let alpha = raw.real("alpha")?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(raw.err("alpha", "must lie in (0, 1)"));
    }
    let gamma0 = raw.real("gamma0")?;
    if gamma0 <= 0.0 {
        return Err(raw.err("gamma0", "must be positive"));
    }
    let decay = raw.choice("decay", &[("inv_sqrt", StepDecay::InvSqrt), ("constant", StepDecay::Constant)])?;
    let iterations = match raw.get("iterations") {
        "auto" => None,
        _ => Some(raw.parse::<u64>("iterations")?),
    };
    let epochs: usize = raw.parse("epochs")?;
    if epochs == 0 {
        return Err(raw.err("epochs", "S must be at least 1"));
    }
    let inner: usize = raw.parse("inner")?;
    let batch: usize = raw.parse("batch")?;
    if batch == 0 || batch > components {
        return Err(raw.err("batch", format!("b must satisfy 1 <= b <= l = {components}")));
    }
    let block: usize = raw.parse("block")?;
    if block == 0 || block > dimension {
        return Err(raw.err("block", format!("Y must satisfy 1 <= Y <= N = {dimension}")));
    }
    let mu = raw.list("mu")?;
    if mu.len() != 1 && mu.len() != dimension {
        return Err(raw.err("mu", format!("give one radius or N = {dimension} radii")));
    }
    if mu.iter().any(|m| *m <= 0.0) {
        return Err(raw.err("mu", "radii must be positive"));
    }
    let x0 = match raw.get("x0") {
        "zeros" => None,
        _ => {
            let v = raw.list("x0")?;
            if v.len() != dimension {
                return Err(raw.err("x0", format!("needs N = {dimension} entries")));
            }
            Some(v)
        }
    };

    let backend = raw.choice(
        "backend",
        &[
            ("sequential", Backend::Sequential),
            ("async", Backend::Async),
            ("simulated", Backend::Simulated),
        ],
    )?;
    if backend != Backend::Sequential && algorithm != Algorithm::Dszovr {
        return Err(raw.err("backend", "async and simulated backends run algorithm = dszovr only"));
    }
    let threads: usize = raw.parse("threads")?;
    if threads == 0 {
        return Err(raw.err("threads", "must be at least 1"));
    }
    let tau: usize = raw.parse("tau")?;
    let delay_law = raw.choice(
        "delay_law",
        &[
            ("none", DelayLawKind::None),
            ("fixed", DelayLawKind::Fixed),
            ("uniform", DelayLawKind::Uniform),
            ("schedule", DelayLawKind::Schedule),
        ],
    )?;
    let delay: usize = raw.parse("delay")?;
    if delay_law == DelayLawKind::Fixed && delay > tau {
        return Err(raw.err("delay", format!("fixed delay exceeds tau = {tau}")));
    }
    let mask_policy = raw.choice(
        "mask_policy",
        &[
            ("all_ones", MaskKind::AllOnes),
            ("random", MaskKind::Random),
            ("schedule", MaskKind::Schedule),
        ],
    )?;
    if delay_law == DelayLawKind::None && mask_policy != MaskKind::AllOnes {
        return Err(raw.err("mask_policy", "must be all_ones when delay_law = none"));
    }
    if mask_policy == MaskKind::Schedule && delay_law != DelayLawKind::Schedule {
        return Err(raw.err("mask_policy", "a mask schedule comes from the schedule file; set delay_law = schedule"));
    }
    let mask_keep = raw.real("mask_keep")?;
    if !(0.0..=1.0).contains(&mask_keep) {
        return Err(raw.err("mask_keep", "must lie in [0, 1]"));
    }
    let schedule_file = raw.path("schedule_file", base)?;
    if delay_law == DelayLawKind::Schedule && schedule_file.is_none() {
        return Err(raw.err("schedule_file", "required when delay_law = schedule"));
    }

    let theory = raw.choice(
        "theory",
        &[
            ("off", TheoryMode::Off),
            ("report", TheoryMode::Report),
            ("enforce", TheoryMode::Enforce),
        ],
    )?;
    let trace_every: u64 = raw.parse("trace_every")?;
    let wall_clock = raw.choice("wall_clock", &[("false", false), ("true", true)])?;
    let out = raw.get("out");
    if out.is_empty() {
        return Err(raw.err("out", "output directory must not be empty"));
    }

    Ok(ExperimentConfig {
        objective,
        samples,
        dim,
        lambda,
        data_seed: raw.parse("data_seed")?,
        label_noise,
        data_csv,
        algorithm,
        gamma,
        u0,
        alpha,
        gamma0,
        decay,
        iterations,
        epochs,
        inner,
        batch,
        block,
        mu,
        seed: raw.parse("seed")?,
        x0,
        backend,
        threads,
        tau,
        delay_law,
        delay,
        mask_policy,
        mask_keep,
        schedule_file,
        scenario_seed: raw.parse("scenario_seed")?,
        theory,
        lipschitz: raw.constant("lipschitz")?,
        lipschitz_tilde: raw.constant("lipschitz_tilde")?,
        lipschitz_hat: raw.constant("lipschitz_hat")?,
        trace_every,
        wall_clock,
        out: PathBuf::from(out),
        components,
        dimension,
    })
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn constant_text(c: ConstantSetting) -> String {
    match c {
        ConstantSetting::Auto => "auto".into(),
        ConstantSetting::Value(v) => v.to_string(),
    }
}

impl ExperimentConfig {
    /// Every key with its resolved value, loadable by [`parse_config`].
    pub fn dump(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(String::new, |p| p.display().to_string());
        let value = |key: &str| -> String {
            match key {
                "objective" => match self.objective {
                    ObjectiveKind::Ridge => "ridge",
                    ObjectiveKind::Logistic => "logistic",
                    ObjectiveKind::LeastSquaresSvm => "lssvm",
                }
                .into(),
                "samples" => self.samples.to_string(),
                "dim" => self.dim.to_string(),
                "lambda" => self.lambda.to_string(),
                "data_seed" => self.data_seed.to_string(),
                "label_noise" => self.label_noise.to_string(),
                "data_csv" => path(&self.data_csv),
                "algorithm" => self.algorithm.name().into(),
                "gamma" => match self.gamma {
                    GammaSetting::Theory => "theory".into(),
                    GammaSetting::Value(g) => g.to_string(),
                },
                "u0" => self.u0.to_string(),
                "alpha" => self.alpha.to_string(),
                "gamma0" => self.gamma0.to_string(),
                "decay" => self.decay.name().into(),
                "iterations" => self.iterations.map_or_else(|| "auto".into(), |t| t.to_string()),
                "epochs" => self.epochs.to_string(),
                "inner" => self.inner.to_string(),
                "batch" => self.batch.to_string(),
                "block" => self.block.to_string(),
                "mu" => join(&self.mu),
                "seed" => self.seed.to_string(),
                "x0" => self.x0.as_deref().map_or_else(|| "zeros".into(), join),
                "backend" => match self.backend {
                    Backend::Sequential => "sequential",
                    Backend::Async => "async",
                    Backend::Simulated => "simulated",
                }
                .into(),
                "threads" => self.threads.to_string(),
                "tau" => self.tau.to_string(),
                "delay_law" => match self.delay_law {
                    DelayLawKind::None => "none",
                    DelayLawKind::Fixed => "fixed",
                    DelayLawKind::Uniform => "uniform",
                    DelayLawKind::Schedule => "schedule",
                }
                .into(),
                "delay" => self.delay.to_string(),
                "mask_policy" => match self.mask_policy {
                    MaskKind::AllOnes => "all_ones",
                    MaskKind::Random => "random",
                    MaskKind::Schedule => "schedule",
                }
                .into(),
                "mask_keep" => self.mask_keep.to_string(),
                "schedule_file" => path(&self.schedule_file),
                "scenario_seed" => self.scenario_seed.to_string(),
                "theory" => match self.theory {
                    TheoryMode::Off => "off",
                    TheoryMode::Report => "report",
                    TheoryMode::Enforce => "enforce",
                }
                .into(),
                "lipschitz" => constant_text(self.lipschitz),
                "lipschitz_tilde" => constant_text(self.lipschitz_tilde),
                "lipschitz_hat" => constant_text(self.lipschitz_hat),
                "trace_every" => self.trace_every.to_string(),
                "wall_clock" => self.wall_clock.to_string(),
                "out" => self.out.display().to_string(),
                other => unreachable!("unlisted key {other}"),
            }
        };
        let mut s = String::from("# resolved configuration\n");
        for (key, _) in KEYS {
            let _ = writeln!(s, "{key} = {}", value(key));
        }
        s
    }

    /// `out`, placed under `root` when relative.
    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if self.out.is_relative() => r.join(&self.out),
            _ => self.out.clone(),
        }
    }

    /// Radii expanded to one per coordinate.
    pub fn mu_vector(&self) -> Vec<f64> {
        if self.mu.len() == 1 {
            vec![self.mu[0]; self.dimension]
        } else {
            self.mu.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config(text, Path::new("."))
    }

    #[test]
    fn minimal_config_gets_every_default() {
        let cfg = parse("objective = ridge\n").unwrap();
        let dump = cfg.dump();
        for (key, _) in KEYS {
            assert!(dump.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
        }
        assert_eq!(cfg.components, 500);
        assert_eq!(cfg.mu_vector().len(), 20);
    }

    #[test]
    fn dump_is_idempotent() {
        let cfg = parse("objective = logistic # comment\nmu = 0.1\ngamma = theory\nsamples = 40\n").unwrap();
        let once = cfg.dump();
        let twice = parse(&once).unwrap().dump();
        assert_eq!(once, twice);
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = parse("objective = ridge\nsamples = 5\nbatch = 6\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("batch") && e.contains("b must"), "{e}");
        let e = parse("objective = ridge\nspeed = 3\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("speed"), "{e}");
        let e = parse("samples = 3\n").unwrap_err().to_string();
        assert!(e.contains("objective"), "{e}");
        let e = parse("objective = ridge\nobjective = ridge\n").unwrap_err().to_string();
        assert!(e.contains("already set"), "{e}");
        let e = parse("objective = ridge\nmu = 0.1,0.2\n").unwrap_err().to_string();
        assert!(e.contains("mu"), "{e}");
        let e = parse("objective = ridge\ndelay_law = schedule\ntau = 2\n").unwrap_err().to_string();
        assert!(e.contains("schedule_file"), "{e}");
    }
}
