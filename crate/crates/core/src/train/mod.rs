//! SGD with momentum, learning-rate schedules, the training loop and
//! metrics persistence.

mod metrics;
mod optim;
mod trainer;

pub use metrics::{EpochMetrics, MetricsRecord, MetricsWriter};
pub use optim::{sgd_step, OptState};
pub use trainer::{accuracy, evaluate, predict_logits, train};

use crate::error::{config_err, Result};
use serde::{Deserialize, Serialize};

/// Learning-rate schedule over epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `lr · factor^k` after `k` milestones have passed.
    Step { milestones: Vec<usize>, factor: f64 },
    /// `lr · (1 + cos(π · epoch / epochs)) / 2`.
    Cosine,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Step {
            milestones: Vec::new(),
            factor: 0.1,
        }
    }
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    4e-5
}

fn default_true() -> bool {
    true
}

fn default_eval_batch() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augment: bool,
    /// Keep every training batch at exactly `batch_size` samples.
    #[serde(default = "default_true")]
    pub drop_last: bool,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

impl TrainConfig {
    pub fn new(lr: f64, epochs: usize, batch_size: usize) -> Self {
        TrainConfig {
            lr,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            epochs,
            batch_size,
            schedule: Schedule::default(),
            seed: 0,
            augment: false,
            drop_last: true,
            eval_batch_size: default_eval_batch(),
        }
    }

    /// `lr = 0` is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return config_err(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config_err(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return config_err(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return config_err("epochs, batch_size and eval_batch_size must be positive");
        }
        if let Schedule::Step { milestones, factor } = &self.schedule {
            if milestones.windows(2).any(|w| w[0] >= w[1]) {
                return config_err(format!("milestones must be strictly increasing, got {milestones:?}"));
            }
            if !(*factor > 0.0) {
                return config_err(format!("step factor must be positive, got {factor}"));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(&self.schedule, self.lr, epoch, self.epochs)
    }
}

/// Learning rate used throughout `epoch` (0-based).
pub fn lr_at(schedule: &Schedule, lr: f64, epoch: usize, epochs: usize) -> f64 {
    match schedule {
        Schedule::Step { milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| epoch >= m).count();
            lr * factor.powi(passed as i32)
        }
        Schedule::Cosine => lr * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos()) / 2.0,
    }
}
