//! Finite-sum objectives `f(x) = (1/l) Σ_i f_i(x)` accessed through component
//! evaluations, plus seeded synthetic datasets and their CSV form.
//!
//! Component indices are 0-based throughout the crate: `i ∈ [0, l)`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// An evaluation-only finite sum. Implementations must be pure: the same
/// `(i, x)` always yields the same value, and evaluation from many threads at
/// once must be safe.
pub trait FiniteSum: Send + Sync {
    /// Dimension `N` of the parameter vector.
    fn dim(&self) -> usize;

    /// Number of components `l`.
    fn num_components(&self) -> usize;

    fn eval_component(&self, i: usize, x: &[f64]) -> Result<f64>;

    /// Full objective. The default sums components in index order.
    fn value(&self, x: &[f64]) -> Result<f64> {
        let l = self.num_components();
        let mut acc = 0.0;
        for i in 0..l {
            acc += self.eval_component(i, x)?;
        }
        Ok(acc / l as f64)
    }

    fn has_analytic_gradient(&self) -> bool {
        false
    }

    /// Analytic `∇f_i(x)`; for telemetry and test oracles only.
    fn component_gradient(&self, _i: usize, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Analytic `∇f(x)`, the mean of the component gradients.
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        if !self.has_analytic_gradient() {
            return None;
        }
        let l = self.num_components();
        let mut acc = vec![0.0; self.dim()];
        for i in 0..l {
            let g = self.component_gradient(i, x)?;
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += gi;
            }
        }
        acc.iter_mut().for_each(|a| *a /= l as f64);
        Some(acc)
    }

    /// A known upper bound on the Lipschitz constant of every `∇f_i`.
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }

    /// True when every component is a quadratic form, in which case central
    /// differences are exact for any radius.
    fn is_quadratic(&self) -> bool {
        false
    }
}

impl<T: FiniteSum + ?Sized> FiniteSum for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_components(&self) -> usize {
        (**self).num_components()
    }
    fn eval_component(&self, i: usize, x: &[f64]) -> Result<f64> {
        (**self).eval_component(i, x)
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        (**self).value(x)
    }
    fn has_analytic_gradient(&self) -> bool {
        (**self).has_analytic_gradient()
    }
    fn component_gradient(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        (**self).component_gradient(i, x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        (**self).gradient(x)
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        (**self).lipschitz_bound()
    }
    fn is_quadratic(&self) -> bool {
        (**self).is_quadratic()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    /// `b_i = a_iᵀx* + noise·ε_i`.
    GaussianLinear,
    /// `b_i = sign(a_iᵀx* + noise·ε_i)` in `{-1, +1}`.
    GaussianLogistic,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::GaussianLinear => "gaussian-linear",
            GeneratorKind::GaussianLogistic => "gaussian-logistic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetOrigin {
    Synthetic {
        kind: GeneratorKind,
        seed: u64,
        noise: f64,
    },
    Provided,
}

/// Dense `l × N` feature matrix (row-major) with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    origin: DatasetOrigin,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || labels.is_empty() {
            return Err(Error::config("dataset needs at least one sample and one feature"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::config(format!(
                "dimension mismatch: {} feature values for {} samples of dimension {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            origin: DatasetOrigin::Provided,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() {
            return Err(Error::config(format!(
                "dimension mismatch: {} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::config(format!("dimension mismatch: row {bad} has wrong length")));
        }
        Dataset::new(rows.concat(), labels, dim)
    }

    /// Features i.i.d. standard normal, labels from a planted parameter vector
    /// drawn from the same stream. Same arguments give bit-identical data.
    pub fn synthetic(kind: GeneratorKind, samples: usize, dim: usize, seed: u64, noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planted: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let features: Vec<f64> = (0..samples * dim).map(|_| rng.sample(StandardNormal)).collect();
        let labels = features
            .chunks_exact(dim)
            .map(|row| {
                let eps: f64 = rng.sample(StandardNormal);
                let score = dot(row, &planted) + noise * eps;
                match kind {
                    GeneratorKind::GaussianLinear => score,
                    GeneratorKind::GaussianLogistic => {
                        if score >= 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                }
            })
            .collect();
        Dataset {
            features,
            labels,
            dim,
            origin: DatasetOrigin::Synthetic { kind, seed, noise },
        }
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn origin(&self) -> &DatasetOrigin {
        &self.origin
    }

    /// Writes the header `j0,...,j{N-1},label` and one sample per line.
    /// Values use shortest round-trip decimal formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("j{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.num_samples() {
            let mut rec: Vec<String> = self.row(i).iter().map(f64::to_string).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let n_cols = headers.len();
        if n_cols < 2 || headers.get(n_cols - 1) != Some("label") {
            return Err(Error::config("dataset CSV header must be j0,...,j{N-1},label"));
        }
        for (j, h) in headers.iter().take(n_cols - 1).enumerate() {
            if h != format!("j{j}") {
                return Err(Error::config(format!("dataset CSV header column {j} is '{h}', expected 'j{j}'")));
            }
        }
        let dim = n_cols - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut parsed = Vec::with_capacity(n_cols);
            for field in rec.iter() {
                parsed.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::config(format!("dataset CSV line {}: bad number '{field}': {e}", line + 2))
                })?);
            }
            labels.push(parsed.pop().expect("record has label column"));
            features.extend(parsed);
        }
        Dataset::new(features, labels, dim)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Dataset::read_csv(File::open(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// `½(aᵀx − b)²`
    Squared,
    /// `log(1 + exp(−b aᵀx))`, `b ∈ {−1, +1}`
    Logistic,
    /// `½(1 − b aᵀx)²`
    LeastSquaresSvm,
}

/// Regularized generalized linear model: `f_i(x) = loss(a_i, b_i, x) + (λ/2)‖x‖²`.
#[derive(Debug, Clone)]
pub struct GlmObjective {
    data: Dataset,
    lambda: f64,
    loss: Loss,
}

pub fn make_ridge(data: Dataset, lambda: f64) -> Result<GlmObjective> {
    GlmObjective::new(data, lambda, Loss::Squared)
}

pub fn make_logistic(data: Dataset, lambda: f64) -> Result<GlmObjective> {
    GlmObjective::new(data, lambda, Loss::Logistic)
}

pub fn make_least_squares_svm(data: Dataset, lambda: f64) -> Result<GlmObjective> {
    GlmObjective::new(data, lambda, Loss::LeastSquaresSvm)
}

impl GlmObjective {
    pub fn new(data: Dataset, lambda: f64, loss: Loss) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be a finite nonnegative real, got {lambda}")));
        }
        if loss == Loss::Logistic {
            if let Some(i) = data.labels.iter().position(|&b| b != 1.0 && b != -1.0) {
                return Err(Error::config(format!(
                    "logistic labels must be -1 or +1; sample {i} has {}",
                    data.labels[i]
                )));
            }
        }
        Ok(GlmObjective { data, lambda, loss })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    fn data_loss(&self, i: usize, x: &[f64]) -> f64 {
        let score = dot(self.data.row(i), x);
        let b = self.data.labels[i];
        match self.loss {
            Loss::Squared => 0.5 * (score - b) * (score - b),
            Loss::Logistic => softplus(-b * score),
            Loss::LeastSquaresSvm => {
                let r = 1.0 - b * score;
                0.5 * r * r
            }
        }
    }

    fn check_dim(&self, x: &[f64]) {
        assert_eq!(x.len(), self.data.dim, "parameter vector has wrong dimension");
    }
}

impl FiniteSum for GlmObjective {
    fn dim(&self) -> usize {
        self.data.dim
    }

    fn num_components(&self) -> usize {
        self.data.num_samples()
    }

    fn eval_component(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_dim(x);
        Ok(self.data_loss(i, x) + 0.5 * self.lambda * dot(x, x))
    }

    /// Sums the data losses and adds the regularizer once.
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x);
        let l = self.num_components();
        let total: f64 = (0..l).map(|i| self.data_loss(i, x)).sum();
        Ok(total / l as f64 + 0.5 * self.lambda * dot(x, x))
    }

    fn has_analytic_gradient(&self) -> bool {
        true
    }

    fn component_gradient(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.check_dim(x);
        let a = self.data.row(i);
        let b = self.data.labels[i];
        let score = dot(a, x);
        let coef = match self.loss {
            Loss::Squared => score - b,
            Loss::Logistic => -b * sigmoid(-b * score),
            Loss::LeastSquaresSvm => -b * (1.0 - b * score),
        };
        Some(a.iter().zip(x).map(|(aj, xj)| coef * aj + self.lambda * xj).collect())
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        let max_curv = (0..self.num_components())
            .map(|i| {
                let a = self.data.row(i);
                let b = self.data.labels[i];
                let norm_sq = dot(a, a);
                match self.loss {
                    Loss::Squared => norm_sq,
                    Loss::Logistic => 0.25 * norm_sq,
                    Loss::LeastSquaresSvm => b * b * norm_sq,
                }
            })
            .fold(0.0, f64::max);
        Some(max_curv + self.lambda)
    }

    fn is_quadratic(&self) -> bool {
        matches!(self.loss, Loss::Squared | Loss::LeastSquaresSvm)
    }
}

/// Component evaluator signature accepted by [`make_blackbox`].
pub type EvalFn = dyn Fn(usize, &[f64]) -> std::result::Result<f64, String> + Send + Sync;

/// Wraps an opaque component evaluator. No gradient information.
pub struct BlackBox {
    dim: usize,
    components: usize,
    eval: Box<EvalFn>,
}

pub fn make_blackbox<F>(dim: usize, components: usize, eval: F) -> BlackBox
where
    F: Fn(usize, &[f64]) -> std::result::Result<f64, String> + Send + Sync + 'static,
{
    BlackBox {
        dim,
        components,
        eval: Box::new(eval),
    }
}

impl std::fmt::Debug for BlackBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlackBox")
            .field("dim", &self.dim)
            .field("components", &self.components)
            .finish_non_exhaustive()
    }
}

impl FiniteSum for BlackBox {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_components(&self) -> usize {
        self.components
    }

    fn eval_component(&self, i: usize, x: &[f64]) -> Result<f64> {
        (self.eval)(i, x).map_err(|message| Error::Evaluation { component: i, message })
    }
}

/// Counts component evaluations of the wrapped objective.
#[derive(Debug)]
pub struct Counting<O> {
    inner: O,
    count: AtomicU64,
}

impl<O: FiniteSum> Counting<O> {
    pub fn new(inner: O) -> Self {
        Counting {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::Relaxed);
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: FiniteSum> FiniteSum for Counting<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn num_components(&self) -> usize {
        self.inner.num_components()
    }
    fn eval_component(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.eval_component(i, x)
    }
    fn has_analytic_gradient(&self) -> bool {
        self.inner.has_analytic_gradient()
    }
    fn component_gradient(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.inner.component_gradient(i, x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.inner.gradient(x)
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        self.inner.lipschitz_bound()
    }
    fn is_quadratic(&self) -> bool {
        self.inner.is_quadratic()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
