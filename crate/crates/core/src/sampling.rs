//! Seeded sampling of mini-batches and coordinate blocks.
//!
//! Each [`Sampler`] owns one ChaCha8 stream selected by `(seed, stream_id)`.
//! ChaCha streams are disjoint keystreams of the same key, so per-worker
//! samplers never share state and do not depend on how workers interleave.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sorted, duplicate-free set of coordinate indices in `[0, N)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoordinateBlock(Vec<usize>);

impl CoordinateBlock {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("coordinate block must be nonempty"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("coordinate block has duplicate indices"));
        }
        if indices[indices.len() - 1] >= dim {
            return Err(Error::config(format!("coordinate index out of range for dimension {dim}")));
        }
        Ok(CoordinateBlock(indices))
    }

    pub fn full(dim: usize) -> Self {
        CoordinateBlock((0..dim).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sorted, duplicate-free set of component indices in `[0, l)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Batch(Vec<usize>);

impl Batch {
    pub fn new(mut indices: Vec<usize>, components: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("mini-batch must be nonempty"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("mini-batch has duplicate indices"));
        }
        if indices[indices.len() - 1] >= components {
            return Err(Error::config(format!("component index out of range for l = {components}")));
        }
        Ok(Batch(indices))
    }

    pub fn full(components: usize) -> Self {
        Batch((0..components).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
    draws: u64,
}

impl Sampler {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Sampler {
            rng,
            seed,
            stream,
            draws: 0,
        }
    }

    /// One sampler per worker, streams `0..workers`.
    pub fn worker_streams(seed: u64, workers: usize) -> Vec<Sampler> {
        (0..workers as u64).map(|s| Sampler::new(seed, s)).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of set draws made so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform size-`b` subset of the `l` components, without replacement.
    pub fn sample_minibatch(&mut self, components: usize, b: usize) -> Result<Batch> {
        if b == 0 || b > components {
            return Err(Error::config(format!("b must satisfy 1 <= b <= l (b = {b}, l = {components})")));
        }
        Ok(Batch(self.subset(components, b)))
    }

    /// Uniform size-`y` subset of the `n` coordinates, without replacement.
    pub fn sample_block(&mut self, dim: usize, y: usize) -> Result<CoordinateBlock> {
        if y == 0 || y > dim {
            return Err(Error::config(format!("Y must satisfy 1 <= Y <= N (Y = {y}, N = {dim})")));
        }
        Ok(CoordinateBlock(self.subset(dim, y)))
    }

    fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        self.draws += 1;
        let mut v = index::sample(&mut self.rng, n, k).into_vec();
        v.sort_unstable();
        v
    }

    pub(crate) fn uniform_f64(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub(crate) fn uniform_usize(&mut self, upper_inclusive: usize) -> usize {
        self.rng.random_range(0..=upper_inclusive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn full_sets_are_forced() {
        let mut s = Sampler::new(3, 0);
        assert_eq!(s.sample_minibatch(7, 7).unwrap(), Batch::full(7));
        assert_eq!(s.sample_block(5, 5).unwrap(), CoordinateBlock::full(5));
    }

    #[test]
    fn oversize_requests_are_config_errors() {
        let mut s = Sampler::new(3, 0);
        assert!(matches!(s.sample_minibatch(3, 4), Err(Error::Config(_))));
        assert!(matches!(s.sample_block(3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn replay_is_deterministic() {
        let mut a = Sampler::new(17, 2);
        let mut b = Sampler::new(17, 2);
        for _ in 0..50 {
            assert_eq!(a.sample_minibatch(10, 3).unwrap(), b.sample_minibatch(10, 3).unwrap());
            assert_eq!(a.sample_block(8, 2).unwrap(), b.sample_block(8, 2).unwrap());
        }
        assert_eq!(a.draws(), 100);
    }

    #[test]
    fn streams_differ_and_ignore_interleaving() {
        let mut solo = Sampler::new(5, 1);
        let expected: Vec<_> = (0..20).map(|_| solo.sample_block(30, 4).unwrap()).collect();

        let mut workers = Sampler::worker_streams(5, 3);
        let mut got = Vec::new();
        for k in 0..20 {
            // interleave other streams irregularly
            for _ in 0..(k % 3) {
                workers[0].sample_block(30, 4).unwrap();
                workers[2].sample_minibatch(9, 2).unwrap();
            }
            got.push(workers[1].sample_block(30, 4).unwrap());
        }
        assert_eq!(expected, got);

        let mut w0 = Sampler::new(5, 0);
        let other: Vec<_> = (0..20).map(|_| w0.sample_block(30, 4).unwrap()).collect();
        assert_ne!(expected, other);
    }

    // Pearson chi-square against the uniform law over all subsets.
    fn chi_square(counts: &HashMap<Vec<usize>, usize>, cells: usize, draws: usize) -> f64 {
        let expected = draws as f64 / cells as f64;
        let observed: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let missing = (cells - counts.len()) as f64 * expected;
        observed + missing
    }

    #[test]
    fn singleton_batches_are_uniform() {
        let mut s = Sampler::new(99, 0);
        let draws = 60_000;
        let mut freq = [0usize; 6];
        for _ in 0..draws {
            let b = s.sample_minibatch(6, 1).unwrap();
            freq[b.indices()[0]] += 1;
        }
        let p = 1.0 / 6.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for f in freq {
            assert!((f as f64 - draws as f64 * p).abs() <= 4.0 * sigma, "{freq:?}");
        }
    }

    #[test]
    fn blocks_are_uniform_over_subsets() {
        let mut s = Sampler::new(1234, 0);
        let draws = 60_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(s.sample_block(4, 2).unwrap().indices().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (k, &c) in &counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{k:?}: {c}");
        }
        // 5 degrees of freedom, 0.999 quantile is 20.5
        assert!(chi_square(&counts, 6, draws) < 20.5);
    }

    #[test]
    fn batches_are_uniform_over_subsets() {
        let mut s = Sampler::new(77, 4);
        let draws = 50_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(s.sample_minibatch(6, 3).unwrap().indices().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 20);
        // 19 degrees of freedom, 0.999 quantile is 43.8
        assert!(chi_square(&counts, 20, draws) < 43.8);
    }
}
