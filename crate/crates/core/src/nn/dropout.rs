use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropoutMode {
    Training,
    Inference,
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` at train time so that
/// inference is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    p: f64,
    mode: DropoutMode,
}

impl DropoutSpec {
    pub fn new(p: f64, mode: DropoutMode) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::InvalidProbability(p));
        }
        Ok(Self { p, mode })
    }

    pub fn training(p: f64) -> Result<Self, NnError> {
        Self::new(p, DropoutMode::Training)
    }

    pub fn inference() -> Self {
        Self {
            p: 0.0,
            mode: DropoutMode::Inference,
        }
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    pub fn mode(&self) -> DropoutMode {
        self.mode
    }

    pub fn is_identity(&self) -> bool {
        self.mode == DropoutMode::Inference || self.p == 0.0
    }

    /// Draws a multiplicative mask (`0` or `1/(1-p)` per unit); `None` when
    /// dropout is the identity.
    pub fn sample_mask<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Option<Vec<f64>> {
        if self.is_identity() {
            return None;
        }
        let keep = 1.0 / (1.0 - self.p);
        Some(
            (0..len)
                .map(|_| {
                    if rng.random::<f64>() < self.p {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect(),
        )
    }

    pub fn apply<R: Rng + ?Sized>(&self, values: &mut [f64], rng: &mut R) {
        if let Some(mask) = self.sample_mask(values.len(), rng) {
            for (v, m) in values.iter_mut().zip(mask) {
                *v *= m;
            }
        }
    }
}
