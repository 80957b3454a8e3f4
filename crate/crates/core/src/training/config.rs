use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub lr_reduce_factor: f64,
    pub lr_reduce_patience: usize,
    /// Validation loss must beat the best by more than this to count as an improvement.
    pub min_delta: f64,
    /// Optional global multiplier reached geometrically by the last epoch (e.g. 0.1).
    pub lr_decay_factor: Option<f64>,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    /// Random rotation, flip and brightness on training images.
    pub augment: bool,
    /// Oversample minority grades in each training epoch up to the majority count.
    pub balance_classes: bool,
    /// Monte-Carlo dropout passes at prediction time.
    pub mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            early_stop_patience: 5,
            lr_reduce_factor: 0.5,
            lr_reduce_patience: 3,
            min_delta: 0.0,
            lr_decay_factor: None,
            split: [0.7, 0.1, 0.2],
            seed: 42,
            augment: true,
            balance_classes: true,
            mc_samples: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if self.early_stop_patience == 0 || self.lr_reduce_patience == 0 {
            return Err(Error::config("patience values must be positive"));
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor <= 1.0) {
            return Err(Error::config("lr_reduce_factor must be in (0, 1]"));
        }
        if let Some(d) = self.lr_decay_factor {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::config("lr_decay_factor must be in (0, 1]"));
            }
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::config("min_delta must be non-negative"));
        }
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split {:?} must sum to 1", self.split)));
        }
        if self.mc_samples < 2 {
            return Err(Error::config("mc_samples must be at least 2"));
        }
        Ok(())
    }
}
