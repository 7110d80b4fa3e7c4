//! Two-point coordinate estimators.
//!
//! Scale convention: a block estimate over `J` with `|J| = Y` carries the
//! factor `N/Y` on every entry, so its expectation over uniformly drawn
//! blocks is the plain central-difference vector `g_mu`. Snapshots store
//! `g_mu` unscaled and [`restrict_snapshot`] applies `N/Y` on restriction.

use crate::error::{Error, Result};
use crate::objectives::FiniteSum;
use crate::sampling::{Batch, CoordinateBlock};

/// Per-coordinate smoothing radii `μ_j > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSchedule {
    mu: Vec<f64>,
}

impl SmoothingSchedule {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::config("smoothing schedule must be nonempty"));
        }
        if let Some(j) = mu.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::config(format!("smoothing radius mu[{j}] = {} must be positive", mu[j])));
        }
        Ok(SmoothingSchedule { mu })
    }

    pub fn uniform(dim: usize, mu: f64) -> Result<Self> {
        SmoothingSchedule::new(vec![mu; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.mu[j]
    }
}

/// Sparse estimate supported on a coordinate block, on the `N/Y` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradient {
    pub block: CoordinateBlock,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl BlockGradient {
    /// The `N/Y` factor applied to every entry.
    pub fn scale(&self) -> f64 {
        block_scale(self.dim, self.block.len())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&j, &v) in self.block.indices().iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }
}

/// Central-difference gradient of `f` at an epoch snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotGradient {
    pub g_mu: Vec<f64>,
    pub snapshot_x: Vec<f64>,
    pub epoch: usize,
}

pub(crate) fn block_scale(dim: usize, block_len: usize) -> f64 {
    dim as f64 / block_len as f64
}

/// `(f_i(x + μ_j e_j) − f_i(x − μ_j e_j)) / (2μ_j)`, two component evaluations.
pub fn central_diff<O: FiniteSum + ?Sized>(obj: &O, i: usize, x: &[f64], j: usize, mu_j: f64) -> Result<f64> {
    if !(mu_j > 0.0 && mu_j.is_finite()) {
        return Err(Error::config(format!("smoothing radius must be positive, got {mu_j}")));
    }
    if j >= x.len() {
        return Err(Error::config(format!("coordinate {j} out of range for dimension {}", x.len())));
    }
    let mut scratch = x.to_vec();
    central_diff_in_place(obj, i, &mut scratch, j, mu_j)
}

/// Perturbs `point[j]` in place and restores it bit-exactly before returning.
fn central_diff_in_place<O: FiniteSum + ?Sized>(
    obj: &O,
    i: usize,
    point: &mut [f64],
    j: usize,
    mu_j: f64,
) -> Result<f64> {
    let orig = point[j];
    point[j] = orig + mu_j;
    let plus = obj.eval_component(i, point);
    point[j] = orig - mu_j;
    let minus = obj.eval_component(i, point);
    point[j] = orig;
    Ok((plus? - minus?) / (2.0 * mu_j))
}

/// `G_J(x; f_i)`: `(N/Y)` times the central difference on each `j ∈ J`.
/// Exactly `2|J|` component evaluations.
pub fn block_gradient<O: FiniteSum + ?Sized>(
    obj: &O,
    i: usize,
    x: &[f64],
    block: &CoordinateBlock,
    mu: &SmoothingSchedule,
) -> Result<BlockGradient> {
    if block.is_empty() {
        return Err(Error::config("coordinate block must be nonempty"));
    }
    let dim = x.len();
    let scale = block_scale(dim, block.len());
    let mut scratch = x.to_vec();
    let values = block
        .indices()
        .iter()
        .map(|&j| central_diff_in_place(obj, i, &mut scratch, j, mu.get(j)).map(|d| scale * d))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockGradient {
        block: block.clone(),
        values,
        dim,
    })
}

/// `(1/|B|) Σ_{i∈B} G_J(x; f_i)` as values on `J`. Components are summed in
/// batch order. Exactly `2|B||J|` evaluations.
pub(crate) fn batch_block_mean<O: FiniteSum + ?Sized>(
    obj: &O,
    batch: &Batch,
    x: &[f64],
    block: &CoordinateBlock,
    mu: &SmoothingSchedule,
) -> Result<Vec<f64>> {
    let mut scratch = x.to_vec();
    let mut acc = vec![0.0; block.len()];
    for &i in batch.indices() {
        for (a, &j) in acc.iter_mut().zip(block.indices()) {
            *a += central_diff_in_place(obj, i, &mut scratch, j, mu.get(j))?;
        }
    }
    let scale = block_scale(x.len(), block.len());
    let b = batch.len() as f64;
    Ok(acc.into_iter().map(|a| scale * (a / b)).collect())
}

/// Dense central differences of one component over all coordinates (`2N` evaluations).
pub fn component_diffs<O: FiniteSum + ?Sized>(obj: &O, i: usize, x: &[f64], mu: &SmoothingSchedule) -> Result<Vec<f64>> {
    let mut scratch = x.to_vec();
    (0..x.len())
        .map(|j| central_diff_in_place(obj, i, &mut scratch, j, mu.get(j)))
        .collect()
}

/// Averages per-component difference rows. Rows are accumulated in the order
/// given, then divided by their count, so any producer that hands rows over in
/// component order gets bit-identical results.
pub fn combine_component_diffs<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for row in rows {
        for (a, r) in acc.iter_mut().zip(row) {
            *a += r;
        }
        count += 1;
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    acc
}

/// Full central-difference gradient of `f` at `x` (`2Nl` evaluations),
/// accumulated sequentially over components in index order.
pub fn full_smoothed_gradient<O: FiniteSum + ?Sized>(
    obj: &O,
    x: &[f64],
    mu: &SmoothingSchedule,
    epoch: usize,
) -> Result<SnapshotGradient> {
    check_mu_dim(mu, x.len())?;
    let l = obj.num_components();
    let mut acc = vec![0.0; x.len()];
    for i in 0..l {
        let row = component_diffs(obj, i, x, mu)?;
        for (a, r) in acc.iter_mut().zip(&row) {
            *a += r;
        }
    }
    acc.iter_mut().for_each(|a| *a /= l as f64);
    Ok(SnapshotGradient {
        g_mu: acc,
        snapshot_x: x.to_vec(),
        epoch,
    })
}

/// `G_J(x̃; f)` from a stored snapshot; no evaluations.
pub fn restrict_snapshot(snap: &SnapshotGradient, block: &CoordinateBlock) -> BlockGradient {
    let dim = snap.g_mu.len();
    let scale = block_scale(dim, block.len());
    BlockGradient {
        block: block.clone(),
        values: block.indices().iter().map(|&j| scale * snap.g_mu[j]).collect(),
        dim,
    }
}

pub(crate) fn check_mu_dim(mu: &SmoothingSchedule, dim: usize) -> Result<()> {
    if mu.dim() != dim {
        return Err(Error::config(format!(
            "smoothing schedule has {} radii but the objective has dimension {dim}",
            mu.dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_blackbox, make_ridge, Counting, Dataset, FiniteSum, GeneratorKind};

    fn quad_with_gradient(g: [f64; 2]) -> impl FiniteSum {
        // f(x) = g·x + ½‖x‖², evaluated at 0 its gradient is g
        make_blackbox(2, 1, move |_, x| Ok(g[0] * x[0] + g[1] * x[1] + 0.5 * (x[0] * x[0] + x[1] * x[1])))
    }

    #[test]
    fn central_diff_examples() {
        let sq = make_blackbox(3, 1, |_, x| Ok(x[1] * x[1]));
        for mu in [1e-3, 0.5, 2.0] {
            assert!((central_diff(&sq, 0, &[0.0, 1.0, 0.0], 1, mu).unwrap() - 2.0).abs() < 1e-12);
        }
        let c = make_blackbox(3, 1, |_, _| Ok(7.0));
        assert_eq!(central_diff(&c, 0, &[1.0, 2.0, 3.0], 2, 0.1).unwrap(), 0.0);
        let e = make_blackbox(1, 1, |_, x| Ok(x[0].exp()));
        let d = central_diff(&e, 0, &[0.0], 0, 1.0).unwrap();
        assert!((d - 1f64.sinh()).abs() < 1e-15);
        assert!((d - 1.175201).abs() < 1e-6);
    }

    #[test]
    fn central_diff_rejects_nonpositive_mu() {
        let c = make_blackbox(1, 1, |_, _| Ok(0.0));
        assert!(matches!(central_diff(&c, 0, &[0.0], 0, 0.0), Err(Error::Config(_))));
        assert!(matches!(central_diff(&c, 0, &[0.0], 0, -1.0), Err(Error::Config(_))));
        assert!(SmoothingSchedule::new(vec![0.1, 0.0]).is_err());
    }

    #[test]
    fn block_gradient_scaling() {
        let f = quad_with_gradient([3.0, -1.0]);
        let mu = SmoothingSchedule::uniform(2, 0.3).unwrap();
        let full = block_gradient(&f, 0, &[0.0, 0.0], &CoordinateBlock::full(2), &mu).unwrap();
        let d = full.to_dense();
        assert!((d[0] - 3.0).abs() < 1e-12 && (d[1] + 1.0).abs() < 1e-12);
        let half = block_gradient(&f, 0, &[0.0, 0.0], &CoordinateBlock::new(vec![0], 2).unwrap(), &mu).unwrap();
        let d = half.to_dense();
        assert!((d[0] - 6.0).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
        assert_eq!(half.scale(), 2.0);
    }

    #[test]
    fn full_gradient_of_two_components() {
        let f = make_blackbox(1, 2, |i, x| Ok(if i == 0 { x[0] * x[0] } else { 4.0 * x[0] }));
        let mu = SmoothingSchedule::new(vec![0.5]).unwrap();
        let snap = full_smoothed_gradient(&f, &[1.0], &mu, 0).unwrap();
        assert!((snap.g_mu[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_objective_gives_zero_snapshot() {
        let f = make_blackbox(3, 4, |_, _| Ok(2.5));
        let mu = SmoothingSchedule::uniform(3, 0.1).unwrap();
        let snap = full_smoothed_gradient(&f, &[1.0, -1.0, 0.0], &mu, 0).unwrap();
        assert_eq!(snap.g_mu, vec![0.0; 3]);
    }

    #[test]
    fn evaluation_budget() {
        let data = Dataset::synthetic(GeneratorKind::GaussianLinear, 7, 5, 3, 0.1);
        let obj = Counting::new(make_ridge(data, 0.1).unwrap());
        let mu = SmoothingSchedule::uniform(5, 0.01).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let block = CoordinateBlock::new(vec![1, 3, 4], 5).unwrap();
        block_gradient(&obj, 2, &x, &block, &mu).unwrap();
        assert_eq!(obj.count(), 6);
        obj.reset();
        full_smoothed_gradient(&obj, &x, &mu, 0).unwrap();
        assert_eq!(obj.count(), 2 * 5 * 7);
        obj.reset();
        let batch = Batch::new(vec![0, 4], 7).unwrap();
        batch_block_mean(&obj, &batch, &x, &block, &mu).unwrap();
        assert_eq!(obj.count(), 2 * 2 * 3);
    }

    #[test]
    fn restrict_snapshot_examples() {
        let snap = SnapshotGradient {
            g_mu: vec![3.0, -1.0],
            snapshot_x: vec![0.0, 0.0],
            epoch: 0,
        };
        let all = restrict_snapshot(&snap, &CoordinateBlock::full(2));
        assert_eq!(all.to_dense(), vec![3.0, -1.0]);
        let one = restrict_snapshot(&snap, &CoordinateBlock::new(vec![1], 2).unwrap());
        assert_eq!(one.to_dense(), vec![0.0, -2.0]);
    }

    #[test]
    fn smoothing_bias_is_second_order() {
        let f = make_blackbox(1, 1, |_, x| Ok(x[0].powi(4)));
        let err = |mu: f64| (central_diff(&f, 0, &[1.0], 0, mu).unwrap() - 4.0).abs();
        for (big, small) in [(0.2, 0.1), (0.1, 0.05)] {
            let ratio = err(big) / err(small);
            assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn evaluations_stay_on_perturbed_axes() {
        let x0 = vec![0.5, -0.25, 2.0, 1.0];
        let probe = x0.clone();
        let mu = SmoothingSchedule::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let f = make_blackbox(4, 1, move |_, x| {
            let moved: Vec<usize> = (0..4).filter(|&j| x[j] != probe[j]).collect();
            if moved.len() != 1 {
                return Err(format!("evaluated off-axis at {x:?}"));
            }
            let j = moved[0];
            let step = (x[j] - probe[j]).abs();
            let expected = [0.1, 0.2, 0.3, 0.4][j];
            if (step - expected).abs() > 1e-12 {
                return Err(format!("step {step} on coordinate {j}"));
            }
            Ok(x.iter().sum())
        });
        let block = CoordinateBlock::new(vec![0, 2, 3], 4).unwrap();
        block_gradient(&f, 0, &x0, &block, &mu).unwrap();
    }
}
