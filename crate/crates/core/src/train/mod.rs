//! Loss, optimiser, schedule and the cross-validated training protocol.

mod experiment;
mod loss;
mod optim;
mod run;
mod schedule;
mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub use experiment::{
    cross_validate, resubstitution_eval, run_grid, run_replications, run_replications_with_seeds, CvResult,
    GridAxes, GridRow, RepRow, ReplicationReport,
};
pub use loss::{per_sample_loss, weighted_ce_loss};
pub use optim::{AdamW, ADAM_EPS, BETA1, BETA2};
pub use run::{evaluate, fit, predict, prepare_batch, train_one_run, EpochRecord, Evaluation, ImageSet, RunResult, RunStatus, Setup, TrainedRun};
pub use schedule::{Decay, Schedule};
pub use weights::{class_weights, ClassCounts, ClassWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// Defaults to 10% of all optimisation steps.
    pub warmup_steps: Option<usize>,
    /// Defaults to `learning_rate / 100`.
    pub min_lr: Option<f64>,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// `(abnormal, normal)` multipliers on the inverse-frequency class weights.
    pub weight_multipliers: (f64, f64),
    pub decay: Decay,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 15,
            weight_decay: 0.05,
            label_smoothing: 0.1,
            warmup_steps: None,
            min_lr: None,
            early_stop_patience: 5,
            seed: 0,
            weight_multipliers: (1.0, 1.0),
            decay: Decay::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            bail!(Config, "learning_rate must be positive");
        }
        if self.epochs == 0 {
            bail!(Config, "epochs must be at least 1");
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            bail!(Config, "label_smoothing must lie in [0, 0.5)");
        }
        if !(self.weight_decay >= 0.0) {
            bail!(Config, "weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn schedule(&self, total_steps: usize) -> Schedule {
        let warmup = self.warmup_steps.unwrap_or(total_steps / 10).min(total_steps.saturating_sub(1));
        Schedule {
            peak_lr: self.learning_rate,
            min_lr: self.min_lr.unwrap_or(self.learning_rate / 100.0),
            warmup_steps: warmup,
            total_steps,
            decay: self.decay.clone(),
        }
    }
}
