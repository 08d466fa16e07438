//! Reproducible random streams for Monte-Carlo runs.
//!
//! Every stream is a ChaCha8 keystream. The 256-bit key is expanded from the
//! 64-bit scenario seed with `rand_core`'s `seed_from_u64` (a PCG32 expansion
//! whose constants are fixed by that crate), and the 64-bit ChaCha stream id
//! selects the sub-stream: run `r` uses stream `r`, the sampled ground-truth
//! trajectory uses [`TRAJECTORY_STREAM`]. ChaCha is counter based, so streams
//! are independent and bit-identical on every platform.
//!
//! Normal variates use the Box-Muller transform on 53-bit uniforms in
//! `(0, 1]`; both outputs of each transform are consumed in order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream id reserved for the sampled ground-truth trajectory.
pub const TRAJECTORY_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct RunStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl RunStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `(0, 1]`.
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }

    pub fn normal(&mut self, mean: f64, variance: f64) -> f64 {
        mean + variance.sqrt() * self.standard_normal()
    }
}

/// Sub-stream of Monte-Carlo run `run_index` under `seed`.
pub fn derive_run_stream(seed: u64, run_index: u64) -> RunStream {
    RunStream::new(seed, run_index)
}
