//! Seeded uniform sampling shared by estimation, zone checks and disturbance streams.
//!
//! All streams use ChaCha8, a counter-based generator whose output is fixed by the
//! seed on every platform. Uniform reals are drawn from the top 53 bits of a `u64`,
//! so every value is an exact multiple of `2^-53` in `[0, 1)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::interval::IntervalBox;

const MANTISSA_SCALE: f64 = 1.0 / (1u64 << 53) as f64;

pub struct UniformSampler {
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * MANTISSA_SCALE
    }

    pub fn in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform point in a box, one draw per dimension in order.
    pub fn in_box(&mut self, b: &IntervalBox) -> Vec<f64> {
        (0..b.dim()).map(|i| self.in_range(b.lo()[i], b.hi()[i])).collect()
    }

    pub fn index(&mut self, n: usize) -> usize {
        ((self.unit() * n as f64) as usize).min(n.saturating_sub(1))
    }
}
