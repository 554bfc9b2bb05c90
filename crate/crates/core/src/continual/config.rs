use serde::{Deserialize, Serialize};

use super::objective::LossWeights;
use crate::error::{Error, Result};

/// Which key/value entries a concept may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    /// Concept neurons: base AND NOT general.
    #[default]
    Concept,
    /// Random entries with the concept mask's per-layer cardinality.
    Random,
    /// Every key/value entry.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_text: f64,
    pub lr_neurons: f64,
    pub steps: usize,
    pub loss_weights: LossWeights,
    /// Samples drawn from `W_0` for prior preservation.
    pub prior_set_size: usize,
    /// Prior pairs per step.
    pub prior_batch: usize,
    /// Rendered images of the new concept; all of them form each concept batch.
    pub images_per_concept: usize,
    pub strategy: MaskStrategy,
}

/// Step sizes are ten times the usual large-model rates (5e-4 text, 3e-5
/// neurons): Adam steps are absolute and the toy weights are far larger.
impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_text: 5e-3,
            lr_neurons: 3e-4,
            steps: 500,
            loss_weights: LossWeights::default(),
            prior_set_size: 20,
            prior_batch: 4,
            images_per_concept: 4,
            strategy: MaskStrategy::Concept,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lw = &self.loss_weights;
        if !(self.lr_text > 0.0 && self.lr_neurons > 0.0) {
            return Err(Error::Usage("learning rates must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Usage("steps must be at least 1".into()));
        }
        if !(lw.lambda >= 0.0 && lw.lambda1 >= 0.0 && lw.lambda2 >= 0.0) {
            return Err(Error::Usage("loss weights must be non-negative".into()));
        }
        if self.images_per_concept == 0 {
            return Err(Error::Usage("at least one concept image is required".into()));
        }
        if lw.lambda > 0.0 && (self.prior_set_size == 0 || self.prior_batch == 0) {
            return Err(Error::Usage("prior preservation needs a non-empty prior set and batch".into()));
        }
        Ok(())
    }

    /// Same settings with the regularizer switched off.
    pub fn without_reg(mut self) -> Self {
        self.loss_weights.lambda1 = 0.0;
        self.loss_weights.lambda2 = 0.0;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_bad_values_do_not() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            lr_text: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.loss_weights.lambda2 = -1.0;
        assert!(c.validate().is_err());
        let c = TrainConfig { steps: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
