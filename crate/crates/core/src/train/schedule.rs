use serde::{Deserialize, Serialize};

/// Smallest increase in validation accuracy that counts as improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

/// Reduce-on-plateau learning rate: after `patience` epochs without a new
/// best accuracy the rate is multiplied by `factor`, never going below
/// `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub best: f64,
    pub counter: usize,
}

impl PlateauScheduler {
    /// `baseline` is the accuracy later epochs have to beat.
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64, baseline: f64) -> Self {
        Self {
            lr: lr.max(min_lr),
            factor,
            patience,
            min_lr,
            best: baseline,
            counter: 0,
        }
    }

    /// Returns true when the rate was reduced.
    pub fn step(&mut self, val_accuracy: f64) -> bool {
        if val_accuracy > self.best + IMPROVEMENT_EPS {
            self.best = val_accuracy;
            self.counter = 0;
            return false;
        }
        self.counter += 1;
        if self.counter >= self.patience {
            self.counter = 0;
            self.lr = (self.lr * self.factor).max(self.min_lr);
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub counter: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, baseline: f64) -> Self {
        Self {
            patience,
            best: baseline,
            counter: 0,
        }
    }

    /// Returns true once `patience` consecutive epochs brought no new best.
    pub fn step(&mut self, val_accuracy: f64) -> bool {
        if val_accuracy > self.best + IMPROVEMENT_EPS {
            self.best = val_accuracy;
            self.counter = 0;
        } else {
            self.counter += 1;
        }
        self.counter >= self.patience
    }
}
