use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Als,
}

/// What is subtracted from targets before fitting and added back at prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    None,
    GlobalMean,
}

/// Shared training hyperparameters for the factor models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Latent dimension (k for MF, K for the tensor, k_f for the FM).
    pub factors: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub centering: Centering,
    /// Standard deviation of the initial factors is `init_scale / sqrt(factors)`.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            factors: 32,
            learning_rate: 0.01,
            lambda: 0.05,
            epochs: 30,
            batch_size: 1,
            seed: 42,
            optimizer: Optimizer::Sgd,
            centering: Centering::GlobalMean,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 {
            return Err(Error::InvalidK("latent dimension must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::InvalidConfig(format!("init_scale must be >= 0, got {}", self.init_scale)));
        }
        Ok(())
    }

    pub(crate) fn init_std(&self) -> f64 {
        self.init_scale / (self.factors as f64).sqrt()
    }
}

/// Abort when the objective leaves finite territory or grows past this
/// multiple of its starting value. A starting value below 1 is treated as 1 so
/// an exactly-fitted initialisation cannot trip the guard on rounding noise.
pub(crate) const DIVERGENCE_FACTOR: f64 = 1e6;

pub(crate) fn check_divergence(epoch: usize, loss: f64, initial: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial.max(1.0) {
        return Err(Error::Divergence { epoch, loss });
    }
    Ok(())
}
