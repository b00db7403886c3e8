//! Reproducible random streams and disturbance samplers.

use crate::linalg::{chol, LinalgError, Mat, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt;

/// Independent pseudo-random stream addressed by `(seed, index)`.
///
/// Streams with the same seed and different indices never overlap, so every
/// Monte-Carlo path can own one regardless of how paths are scheduled.
#[derive(Clone)]
pub struct RngStream {
    seed: u64,
    index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        RngStream { seed, index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream").field("seed", &self.seed).field("index", &self.index).finish()
    }
}

/// Source of centered disturbance draws `W − E[W]`.
pub trait DisturbanceSampler: Send + Sync {
    fn dim(&self) -> usize;
    /// Writes one centered draw into `out`.
    fn sample_centered(&self, rng: &mut RngStream, out: &mut [f64]);
    /// Whether the draws are exactly Gaussian (closed-form back-offs apply).
    fn is_gaussian(&self) -> bool;
}

/// Zero-mean Gaussian with covariance `L Lᵀ`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: Mat,
}

impl GaussianSampler {
    pub fn new(covariance: &Mat) -> Result<Self, LinalgError> {
        Ok(GaussianSampler { factor: chol(covariance)? })
    }

    pub fn factor(&self) -> &Mat {
        &self.factor
    }
}

impl DisturbanceSampler for GaussianSampler {
    fn dim(&self) -> usize {
        self.factor.nrows()
    }

    fn sample_centered(&self, rng: &mut RngStream, out: &mut [f64]) {
        let n = self.factor.nrows();
        let mut xi = [0.0f64; 16];
        let mut heap;
        let xi: &mut [f64] = if n <= 16 {
            &mut xi[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for v in xi.iter_mut() {
            *v = rng.standard_normal();
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (j, x) in xi.iter().enumerate().take(i + 1) {
                acc += self.factor[(i, j)] * x;
            }
            out[i] = acc;
        }
    }

    fn is_gaussian(&self) -> bool {
        true
    }
}

/// Independent centered uniform coordinates on `[−h, h]`; a non-Gaussian
/// disturbance with covariance `diag(h²/3)`.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    pub half_widths: Vec<f64>,
}

impl DisturbanceSampler for UniformSampler {
    fn dim(&self) -> usize {
        self.half_widths.len()
    }

    fn sample_centered(&self, rng: &mut RngStream, out: &mut [f64]) {
        for (o, h) in out.iter_mut().zip(&self.half_widths) {
            *o = h * (2.0 * rng.uniform() - 1.0);
        }
    }

    fn is_gaussian(&self) -> bool {
        false
    }
}

impl UniformSampler {
    pub fn covariance(&self) -> Mat {
        Mat::from_diagonal(&Vector::from_iterator(
            self.half_widths.len(),
            self.half_widths.iter().map(|h| h * h / 3.0),
        ))
    }
}
