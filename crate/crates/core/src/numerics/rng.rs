//! Seeded ChaCha20 streams.
//!
//! Every stochastic call takes an explicit [`Rng`]. Independent concerns
//! (data, branch init, gate init, batching) draw from distinct streams of
//! the same seed so that changing one consumer never shifts another.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::Mat;

/// Purposes that get their own ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Backbone = 1,
    Data = 2,
    Branch = 3,
    Gate = 4,
    Batches = 5,
    Traces = 6,
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Stream keyed by `(purpose, index)`, e.g. the gate stream of task 3.
    pub fn stream(seed: u64, purpose: Stream, index: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(((purpose as u64) << 32) | (index & 0xffff_ffff));
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, sorted ascending. All of them when `k >= n`.
    pub fn subsample(&mut self, n: usize, k: usize) -> Vec<usize> {
        if k >= n {
            return (0..n).collect();
        }
        let mut idx = rand::seq::index::sample(&mut self.inner, n, k).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Matrix of i.i.d. `N(0, std²)` entries drawn row-major from `rng`.
pub fn gaussian_init(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Mat {
    debug_assert!(std >= 0.0);
    Mat::from_fn(rows, cols, |_, _| std * rng.normal())
}
