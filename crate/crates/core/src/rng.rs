//! Seeded random source used by the sampler and synthetic-data tests.
//!
//! ChaCha8 keyed by a 64-bit seed, with the stream id used to derive
//! independent per-chain generators from one master seed. Normal deviates
//! come from Box-Muller so draws are identical on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for a numbered sub-task (e.g. a chain).
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { inner }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * INV_2_53
    }

    /// Standard normal deviate (Box-Muller, cosine branch).
    pub fn standard_normal(&mut self) -> f64 {
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.inner.next_u64() >> 11) + 1) as f64 * INV_2_53;
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }
}
