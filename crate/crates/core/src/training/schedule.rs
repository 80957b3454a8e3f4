use serde::{Deserialize, Serialize};

/// Outcome of one validation epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlateauEvent {
    Improved,
    Stale,
    /// Learning rate multiplied by the reduce factor; carries the new value.
    Reduced(f64),
    Stop,
}

/// Validation-loss plateau rule: the rate is multiplied by `factor` after
/// `reduce_patience` epochs without improvement, and training stops after
/// `stop_patience` consecutive epochs without improving the best value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauController {
    pub lr: f64,
    pub factor: f64,
    pub reduce_patience: usize,
    pub stop_patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub stale: usize,
    stale_since_reduce: usize,
}

impl PlateauController {
    pub fn new(lr: f64, factor: f64, reduce_patience: usize, stop_patience: usize, min_delta: f64) -> Self {
        Self {
            lr,
            factor,
            reduce_patience,
            stop_patience,
            min_delta,
            best: f64::INFINITY,
            stale: 0,
            stale_since_reduce: 0,
        }
    }

    pub fn step(&mut self, val_loss: f64) -> PlateauEvent {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.stale = 0;
            self.stale_since_reduce = 0;
            return PlateauEvent::Improved;
        }
        self.stale += 1;
        self.stale_since_reduce += 1;
        if self.stale >= self.stop_patience {
            return PlateauEvent::Stop;
        }
        if self.stale_since_reduce >= self.reduce_patience {
            self.stale_since_reduce = 0;
            self.lr *= self.factor;
            return PlateauEvent::Reduced(self.lr);
        }
        PlateauEvent::Stale
    }
}
