//! Monte Carlo plumbing: estimates with standard errors, the seed-splitting
//! scheme and a deterministic parallel map over path indices.
//!
//! Every random draw in the crate comes from [`path_rng`]. A run is
//! identified by `(seed, stream, index)`: `seed` is the experiment seed,
//! `stream` names the estimator (one constant per call site) and `index` is
//! the path number. The ChaCha8 key is derived from `seed` and `stream`
//! through SplitMix64 and the path index selects the ChaCha stream, so paths
//! are independent and reproducible regardless of worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0x5151_5151)))
}

pub fn path_rng(seed: u64, stream: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
    rng.set_stream(index);
    rng
}

/// Order-preserving parallel map over `0..n`.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Mean, standard error and provenance of a Monte Carlo quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub seeds: Vec<u64>,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        if n == 0 {
            return McEstimate {
                mean: f64::NAN,
                stderr: f64::NAN,
                n: 0,
                seeds: vec![seed],
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n as f64 - 1.0) / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        McEstimate {
            mean,
            stderr,
            n,
            seeds: vec![seed],
        }
    }

    pub fn exact(value: f64) -> Self {
        McEstimate {
            mean: value,
            stderr: 0.0,
            n: 0,
            seeds: vec![],
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        McEstimate {
            mean: self.mean * c,
            stderr: self.stderr * c.abs(),
            ..self.clone()
        }
    }

    /// Difference of two independent estimates.
    pub fn minus(&self, other: &McEstimate) -> Self {
        McEstimate {
            mean: self.mean - other.mean,
            stderr: self.combined_se(other),
            n: self.n.min(other.n),
            seeds: self.seeds.iter().chain(&other.seeds).copied().collect(),
        }
    }

    pub fn plus(&self, other: &McEstimate) -> Self {
        McEstimate {
            mean: self.mean + other.mean,
            ..self.minus(other)
        }
    }

    pub fn combined_se(&self, other: &McEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// Number of standard errors separating the estimate from `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        (self.mean - value) / self.stderr
    }

    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }

    pub fn agrees_with(&self, other: &McEstimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.combined_se(other)
    }
}
