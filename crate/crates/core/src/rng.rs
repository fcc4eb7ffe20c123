//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`SeededRng`], a ChaCha8
//! stream cipher keyed by `ChaCha8Rng::seed_from_u64(seed)`. The block
//! counter makes the stream a pure function of the seed. Derived variates
//! use fixed formulas so that another implementation keyed the same way
//! reproduces them:
//!
//! * uniform in `[0, 1)`: `(next_u64 >> 11) * 2^-53`
//! * uniform in `(0, 1]`: `1 - uniform[0,1)`
//! * standard normal: Box-Muller cosine branch, `sqrt(-2 ln u1) * cos(2 pi u2)`
//!   with `u1` in `(0, 1]` and `u2` in `[0, 1)`; one normal per two uniforms
//! * Rayleigh(scale): `scale * sqrt(-2 ln u)` with `u` in `(0, 1]`
//! * integer below `n`: `floor(uniform * n)`
//!
//! Sub-streams are keyed with [`derive_seed`].

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`, safe to pass to `ln`.
    pub fn uniform_open_zero(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform_open_zero();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        mean + std_dev * self.gaussian()
    }

    pub fn rayleigh(&mut self, scale: f64) -> f64 {
        scale * (-2.0 * self.uniform_open_zero().ln()).sqrt()
    }

    pub fn index_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// `k` distinct indices from `0..n` by a partial Fisher-Yates shuffle,
    /// in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.index_below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `index` of `stream` under `root`:
/// `splitmix64(splitmix64(root ^ splitmix64(stream)) ^ index)`.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ splitmix64(stream)) ^ index)
}

/// Stream tags used with [`derive_seed`].
pub mod streams {
    pub const TRAIN_NETWORKS: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const PERTURBATION: u64 = 3;
    pub const RANDOM_ALLOCATION: u64 = 4;
    pub const THEOREM_GRAPH: u64 = 5;
    pub const THEOREM_FILTERS: u64 = 6;
    pub const THEOREM_PERTURBATION: u64 = 7;
    pub const THEOREM_SIGNAL: u64 = 8;
}
