use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Pool;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gaussian classes whose means move along a fixed direction over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    pub n_classes: usize,
    pub dim: usize,
    /// Std-dev of the class means around the origin.
    pub mean_scale: f64,
    /// Base per-dimension noise std-dev; each class draws its own in
    /// `[0.5, 1.5] * cov_scale`.
    pub cov_scale: f64,
    /// Distance a class mean moves per time step.
    pub drift: f64,
    /// Samples per class per time step (before the train/test split).
    pub samples_per_class: usize,
    /// Number of time steps generated.
    pub n_epochs: usize,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            dim: 32,
            mean_scale: 2.0,
            cov_scale: 1.0,
            drift: 0.0,
            samples_per_class: 200,
            n_epochs: 4,
            seed: 0,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.dim == 0 || self.samples_per_class == 0 || self.n_epochs == 0 {
            return Err(Error::Config("drift counts must all be >= 1".into()));
        }
        if !(self.mean_scale > 0.0 && self.cov_scale > 0.0) {
            return Err(Error::Config("mean_scale and cov_scale must be > 0".into()));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(Error::Config(format!("drift must be >= 0, got {}", self.drift)));
        }
        Ok(())
    }
}

/// Class `c` at step `t` is `N(mu_c + t * drift * u_c, diag(sigma_c^2))` with
/// a fixed unit direction `u_c`. The same standard-normal draws are reused
/// at every step, so only the drift term differs between steps.
pub fn generate_synthetic(cfg: &DriftConfig) -> Result<Pool> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let mut samples = Vec::with_capacity(cfg.n_classes);
    for _ in 0..cfg.n_classes {
        let mean: Vec<f64> = (0..d).map(|_| cfg.mean_scale * normal(&mut rng)).collect();
        let mut dir: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        dir.iter_mut().for_each(|v| *v /= norm);
        let sigma: Vec<f64> = (0..d).map(|_| cfg.cov_scale * rng.random_range(0.5..1.5)).collect();
        let noise: Vec<f64> = (0..cfg.samples_per_class * d).map(|_| normal(&mut rng)).collect();
        let per_epoch = (0..cfg.n_epochs)
            .map(|t| {
                let offset = t as f64 * cfg.drift;
                let data = noise
                    .iter()
                    .enumerate()
                    .map(|(i, z)| {
                        let j = i % d;
                        mean[j] + offset * dir[j] + sigma[j] * z
                    })
                    .collect();
                Some(Tensor::from_parts(vec![cfg.samples_per_class, d], data))
            })
            .collect();
        samples.push(per_epoch);
    }
    Ok(Pool {
        class_names: (0..cfg.n_classes).map(|c| format!("class{c}")).collect(),
        dim: d,
        samples,
    })
}
