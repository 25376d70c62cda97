//! Tanh-squashed Gaussian sampling heads.
//!
//! A policy network emits `2d` values per row: `d` means followed by `d` raw
//! log-std values. The raw log-std is mapped smoothly into `(min, max)` via
//! `min + 0.5 (max - min) (tanh(raw) + 1)` so gradients never die at the
//! bounds. Samples are `tanh(mean + std * eps)` and the log-density carries
//! the change-of-variables correction.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::mat::Mat;

/// Samples are clamped to at most this magnitude; they never touch +-1.
pub const SQUASH_LIMIT: f64 = 1.0 - 1e-6;
/// Guard added under the log in the squash correction.
const SQUASH_GUARD: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_2;

#[derive(Clone, Copy, Debug)]
pub struct LogStdBounds {
    pub min: f64,
    pub max: f64,
}

impl LogStdBounds {
    /// Stability range for squashed-Gaussian policies.
    pub const DEFAULT: LogStdBounds = LogStdBounds { min: -20.0, max: 2.0 };

    #[inline]
    pub fn map_raw(&self, raw: f64) -> f64 {
        self.min + 0.5 * (self.max - self.min) * (raw.tanh() + 1.0)
    }
}

/// A diagonal Gaussian with tanh squashing, for one input row.
#[derive(Clone, Debug)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianHead {
    /// Splits a raw network output `[mean..., raw_log_std...]`.
    pub fn from_raw(raw: &[f64], bounds: LogStdBounds) -> Self {
        assert!(raw.len() % 2 == 0, "head output must have even width");
        let d = raw.len() / 2;
        GaussianHead {
            mean: raw[..d].to_vec(),
            log_std: raw[d..].iter().map(|&r| bounds.map_raw(r)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws a squashed sample and its log-density. The log-density is
    /// computed from the noise directly, so it stays finite even as
    /// `std -> 0` (it diverges to +inf only in the exactly-degenerate case).
    pub fn squashed_sample(&self, rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let d = self.dim();
        let mut y = Vec::with_capacity(d);
        let mut logp = -0.5 * LN_2PI * d as f64;
        for i in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            let std = self.log_std[i].exp();
            let u = self.mean[i] + std * eps;
            let yi = u.tanh();
            logp += -0.5 * eps * eps - self.log_std[i];
            logp -= (1.0 - yi * yi + SQUASH_GUARD).ln();
            y.push(yi.clamp(-SQUASH_LIMIT, SQUASH_LIMIT));
        }
        (y, logp)
    }

    /// Log-density of an arbitrary point in (-1, 1)^d.
    pub fn log_prob(&self, y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.dim());
        let mut logp = -0.5 * LN_2PI * y.len() as f64;
        for i in 0..y.len() {
            let yc = y[i].clamp(-SQUASH_LIMIT, SQUASH_LIMIT);
            let u = yc.atanh();
            let std = self.log_std[i].exp();
            let eps = (u - self.mean[i]) / std;
            logp += -0.5 * eps * eps - self.log_std[i];
            logp -= (1.0 - yc * yc + SQUASH_GUARD).ln();
        }
        logp
    }
}

/// Batched head over `B` rows.
pub struct HeadBatch {
    pub mean: Mat,
    pub log_std: Mat,
}

pub struct BatchSample {
    /// B x d squashed samples, clamped inside (-1, 1).
    pub value: Mat,
    /// Per-row log-density.
    pub log_prob: Vec<f64>,
    /// The standard-normal noise that produced the samples.
    pub eps: Mat,
}

impl HeadBatch {
    /// Splits a raw batched network output (B x 2d).
    pub fn from_raw(raw: &Mat, bounds: LogStdBounds) -> Self {
        assert!(raw.cols() % 2 == 0, "head output must have even width");
        let d = raw.cols() / 2;
        let b = raw.rows();
        let mut mean = Mat::zeros(b, d);
        let mut log_std = Mat::zeros(b, d);
        for i in 0..b {
            let row = raw.row(i);
            mean.row_mut(i).copy_from_slice(&row[..d]);
            for (j, &r) in row[d..].iter().enumerate() {
                log_std.set(i, j, bounds.map_raw(r));
            }
        }
        HeadBatch { mean, log_std }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> BatchSample {
        let (b, d) = (self.mean.rows(), self.mean.cols());
        let mut value = Mat::zeros(b, d);
        let mut eps = Mat::zeros(b, d);
        let mut log_prob = Vec::with_capacity(b);
        for i in 0..b {
            let mut logp = -0.5 * LN_2PI * d as f64;
            for j in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                let ls = self.log_std.get(i, j);
                let u = self.mean.get(i, j) + ls.exp() * e;
                let y = u.tanh();
                logp += -0.5 * e * e - ls;
                logp -= (1.0 - y * y + SQUASH_GUARD).ln();
                eps.set(i, j, e);
                value.set(i, j, y.clamp(-SQUASH_LIMIT, SQUASH_LIMIT));
            }
            log_prob.push(logp);
        }
        BatchSample { value, log_prob, eps }
    }
}
