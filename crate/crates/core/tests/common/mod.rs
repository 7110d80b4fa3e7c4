#![allow(dead_code)]

use zovr_core::{make_ridge, Dataset, GeneratorKind, GlmObjective, RunConfig, SmoothingSchedule};

/// Ridge regression on 500 Gaussian samples in 20 dimensions, λ = 0.01, data seed 42.
pub fn reference_ridge() -> GlmObjective {
    let data = Dataset::synthetic(GeneratorKind::GaussianLinear, 500, 20, 42, 1.0);
    make_ridge(data, 0.01).unwrap()
}

pub fn small_ridge(samples: usize, dim: usize, seed: u64) -> GlmObjective {
    let data = Dataset::synthetic(GeneratorKind::GaussianLinear, samples, dim, seed, 0.3);
    make_ridge(data, 0.05).unwrap()
}

/// All size-`k` subsets of `0..n`, in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dszovr_config(dim: usize, gamma: f64, epochs: usize, inner: usize, block: usize, seed: u64) -> RunConfig {
    RunConfig {
        gamma,
        epochs,
        inner,
        block,
        seed,
        mu: SmoothingSchedule::uniform(dim, 0.01).unwrap(),
        ..RunConfig::new(dim)
    }
}
