//! Deterministic, pre-assignable random streams.
//!
//! Every stochastic choice in the crate draws from a stream derived from
//! `(base seed, purpose tag, indices)`. Streams never share state, so
//! member-parallel and serial execution produce identical bytes, and frozen
//! test values stay stable across dependency upgrades (all sampling routines
//! are written out here rather than delegated to `rand` distributions).

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Purpose tags for stream derivation.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const POISSON: u64 = 4;
    pub const DATA: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const PROBE: u64 = 7;
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a tag path. Distinct paths give
/// statistically independent children.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in path {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// Deterministic RNG with explicit sampling routines.
pub struct DetRng(ChaCha8Rng);

impl DetRng {
    pub fn from_seed(seed: u64) -> Self {
        DetRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn derived(base: u64, path: &[u64]) -> Self {
        Self::from_seed(derive(base, path))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 mantissa bits.
    pub fn f64_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.f64_unit()
    }

    /// Uniform integer in `[0, n)` without modulo bias.
    pub fn u64_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "u64_below requires n > 0");
        // Accept draws below the largest multiple of n.
        let reject_from = u64::MAX - ((u64::MAX % n) + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= reject_from {
                return x % n;
            }
        }
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.f64_unit().max(f64::MIN_POSITIVE);
        let u2 = self.f64_unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.u64_below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Poisson(1) draw via Knuth's product method.
    pub fn poisson1(&mut self) -> u64 {
        let threshold = (-1.0f64).exp();
        let mut k = 0u64;
        let mut p = 1.0f64;
        loop {
            p *= self.f64_unit();
            if p <= threshold {
                return k;
            }
            k += 1;
        }
    }
}
