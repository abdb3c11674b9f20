use serde::{Deserialize, Serialize};

use crate::dataset::{AugmentConfig, SplitUnit, Target};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_lr: f64,
    /// Fraction of optimizer steps spent raising the learning rate.
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    /// β₁ at the learning-rate peak.
    pub base_momentum: f64,
    /// β₁ at the first and last step.
    pub max_momentum: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub target: Target,
    /// `None` trains on the segments unchanged.
    pub augment: Option<AugmentConfig>,
    pub train_frac: f64,
    pub split_unit: SplitUnit,
    /// Evaluate the train split in eval mode after every epoch.
    pub track_train_accuracy: bool,
    /// Stop once the eval-mode train accuracy reaches this value (implies
    /// tracking).
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 7.96e-6,
            pct_start: 0.425,
            div_factor: 10.0,
            final_div_factor: 10.0,
            base_momentum: 0.7403,
            max_momentum: 0.8314,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 50,
            patience: 10,
            batch_size: 32,
            seed: 1,
            target: Target::Arousal,
            augment: Some(AugmentConfig::default()),
            train_frac: 0.8,
            split_unit: SplitUnit::Segment,
            track_train_accuracy: false,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return bad(format!("max_lr {} must be positive", self.max_lr));
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return bad(format!("pct_start {} not in (0, 1)", self.pct_start));
        }
        if !(self.div_factor > 0.0 && self.final_div_factor > 0.0) {
            return bad("div_factor and final_div_factor must be positive".into());
        }
        for m in [self.base_momentum, self.max_momentum, self.beta2] {
            if !(0.0..1.0).contains(&m) {
                return bad(format!("momentum {m} not in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps {} must be positive", self.eps));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.patience == 0 || self.patience > self.epochs {
            return bad(format!("patience {} not in 1..={}", self.patience, self.epochs));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size {} too small for batch-norm", self.batch_size));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train_frac {} not in (0, 1)", self.train_frac));
        }
        if let Some(a) = self.stop_at_train_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("stop_at_train_accuracy {a} not in [0, 1]"));
            }
        }
        if let Some(aug) = &self.augment {
            if let Some((lo, hi)) = aug.scale {
                if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                    return bad(format!("augment scale range ({lo}, {hi}) invalid"));
                }
            }
            if !(aug.noise_frac >= 0.0 && aug.noise_frac.is_finite()) {
                return bad(format!("augment noise_frac {} invalid", aug.noise_frac));
            }
        }
        Ok(())
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.initial_lr() / self.final_div_factor
    }
}
