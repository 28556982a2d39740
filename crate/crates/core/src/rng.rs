//! Deterministic random streams.
//!
//! All randomness in the library flows from a single 64-bit seed. Independent
//! substreams are derived from (seed, stream) pairs through a counter-based
//! stream cipher generator, so ensembles are reproducible across platforms and
//! insensitive to evaluation order.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Deterministic generator for one substream of a seeded experiment.
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    /// Opens substream `stream` of the experiment identified by `seed`.
    ///
    /// Streams with distinct indices are statistically independent; the same
    /// (seed, stream) pair always yields the same sequence.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Stream { rng }
    }

    /// Standard normal variate.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Complex normal variate with independent N(0, 1/2) parts, so
    /// E|z|^2 = 1.
    pub fn complex_normal(&mut self) -> Complex64 {
        let re: f64 = self.rng.sample(StandardNormal);
        let im: f64 = self.rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}
