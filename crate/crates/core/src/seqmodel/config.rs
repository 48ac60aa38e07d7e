use serde::{Deserialize, Serialize};

use crate::corpus::vocab::MAX_SEQUENCE_LEN;
use crate::{Error, Result};

/// Transformer shape. Dropout is carried for completeness and must be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            context_len: MAX_SEQUENCE_LEN,
            vocab_size: 38,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Shape checks that do not depend on the corpus.
    pub fn validate_shape(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context_len == 0 || self.vocab_size == 0 {
            return Err(Error::invalid(
                "context_len and vocab_size must be positive",
            ));
        }
        if self.dropout != 0.0 {
            return Err(Error::invalid("dropout is not supported; set it to 0.0"));
        }
        Ok(())
    }

    /// Full validation for models that consume the process-planning corpus.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if self.context_len < MAX_SEQUENCE_LEN {
            return Err(Error::invalid(format!(
                "context_len {} shorter than the longest sequence ({MAX_SEQUENCE_LEN})",
                self.context_len
            )));
        }
        if self.vocab_size != 38 {
            return Err(Error::invalid(format!(
                "vocab_size {} does not match the 38-token vocabulary",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (v, c, d, f) = (self.vocab_size, self.context_len, self.d_model, self.d_ff);
        let per_layer = 2 * d          // ln1
            + d * 3 * d + 3 * d        // qkv
            + d * d + d                // attention output
            + 2 * d                    // ln2
            + d * f + f                // fc
            + f * d + d; // projection
        v * d + c * d + self.n_layers * per_layer + 2 * d
    }
}

/// Optimizer and schedule settings for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    /// Supplied per run by the caller; not part of the config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            epochs: 300,
            grad_clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        Ok(())
    }
}
