//! Seeded random streams.
//!
//! Every stochastic decision in the crate (weight initialization, shuffling,
//! flips, synthetic data) draws from an [`RngState`]. The generator is
//! ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`), a counter-based stream
//! cipher whose output is fixed by its specification and independent of
//! platform and word size. The 64-bit seed is expanded to the 256-bit ChaCha
//! key by `SeedableRng::seed_from_u64` (a PCG32 expansion defined by
//! `rand_core`).
//!
//! Derived sampling is done here rather than through distribution objects so
//! that the mapping from raw `u64` draws to values is pinned:
//!
//! * `uniform()` uses the top 53 bits: `(x >> 11) * 2^-53`, in `[0, 1)`.
//! * `normal()` is Box-Muller on two uniforms, no caching of the second value.
//! * `below(n)` is Lemire's multiply-shift with rejection.
//! * `shuffle` is Fisher-Yates driven by `below`.
//!
//! Independent sub-streams are obtained with [`RngState::derive`], which mixes
//! the parent seed with a tag through SplitMix64.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh stream whose seed depends only on this stream's seed and `tag`,
    /// not on how many values have been drawn so far.
    pub fn derive(&self, tag: u64) -> RngState {
        RngState::new(splitmix64(self.seed ^ splitmix64(tag)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Poisson sample; inversion for small means, normal approximation above 50.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        if mean > 50.0 {
            let v = (mean + mean.sqrt() * self.normal()).round();
            return v.max(0.0) as u64;
        }
        let limit = (-mean).exp();
        let mut k = 0u64;
        let mut prod = self.uniform();
        while prod > limit {
            k += 1;
            prod *= self.uniform();
        }
        k
    }
}
