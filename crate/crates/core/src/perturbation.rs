//! Exponential perturbations and the closed-form probability that one
//! perturbed expert beats the other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, Result};

/// Reproducible stream of Exp(1) draws.
///
/// Each `(seed, stream_id)` pair addresses an independent ChaCha keystream, so
/// draw `k` of a stream is the same on every run and platform.
#[derive(Debug, Clone)]
pub struct ExpSampler {
    seed: u64,
    stream_id: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl ExpSampler {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        ExpSampler {
            seed,
            stream_id,
            draws: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of values drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform on `(0, 1]`.
    pub fn sample_uniform(&mut self) -> f64 {
        self.draws += 1;
        1.0 - self.rng.random::<f64>()
    }

    /// Exp(1) by inversion, `-ln(u)`.
    pub fn sample_exp(&mut self) -> f64 {
        0.0 - self.sample_uniform().ln()
    }
}

/// `P{xi1 - xi2 > a}` for independent Exp(1) variables.
///
/// The difference is standard Laplace, so the tail is `e^{-a}/2` for `a >= 0`
/// and `1 - e^{a}/2` below zero.
pub fn comparison_probability(a: f64) -> Result<f64> {
    ensure_finite("comparison offset", a)?;
    Ok(laplace_tail(a))
}

pub(crate) fn laplace_tail(a: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (-a).exp()
    } else {
        1.0 - 0.5 * a.exp()
    }
}
