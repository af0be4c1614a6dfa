use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::mil::ClamConfig;

pub const DEFAULT_MAX_EPOCHS: usize = 200;
pub const DEFAULT_PATIENCE: usize = 20;

/// Hyperparameters of one training run. Defaults are the final selection of
/// the three-stage tuning (lr 1e-3, dropout 0.85, L2 0.5, attention 16,
/// 75 patches per slide).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Drop probability applied to the hidden and gated-attention activations.
    pub dropout: f64,
    /// Coupled L2 weight decay in Adam.
    pub l2_weight: f64,
    /// Attention width L; the hidden layer is L/2.
    pub attention_dim: usize,
    /// Regions sampled from each slide per epoch.
    pub patches_per_slide: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Inverse-frequency class weights in the training loss.
    pub class_weighting: bool,
    pub clam: Option<ClamConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            dropout: 0.85,
            l2_weight: 0.5,
            attention_dim: 16,
            patches_per_slide: 75,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed: 0,
            class_weighting: false,
            clam: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::config(
                "learning_rate",
                format!("{} must be positive", self.learning_rate),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HarnessError::config(
                "dropout",
                format!("{} outside [0, 1)", self.dropout),
            ));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(HarnessError::config(
                "l2_weight",
                format!("{} must be non-negative", self.l2_weight),
            ));
        }
        if self.attention_dim < 2 || !self.attention_dim.is_multiple_of(2) {
            return Err(HarnessError::config(
                "attention_dim",
                format!("{} must be even and at least 2", self.attention_dim),
            ));
        }
        if self.patches_per_slide == 0 {
            return Err(HarnessError::config(
                "patches_per_slide",
                "must be at least 1",
            ));
        }
        if self.max_epochs == 0 {
            return Err(HarnessError::config("max_epochs", "must be at least 1"));
        }
        if let Some(c) = &self.clam {
            c.validate()
                .map_err(|e| HarnessError::config("clam", e.to_string()))?;
        }
        Ok(())
    }
}
