use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_input_tokens: usize,
    /// Longest decoder sequence, BOS included.
    pub max_target_tokens: usize,
    pub vocab_size: usize,
    pub num_labels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 6,
            d_model: 300,
            d_ff: 1200,
            dropout: 0.1,
            max_input_tokens: 100,
            max_target_tokens: 100,
            vocab_size: 8000,
            num_labels: empdial_core::NUM_LABELS,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return bad(format!("d_model {} is not divisible by num_heads {}", self.d_model, self.num_heads));
        }
        if self.max_input_tokens < 2 {
            return bad("max_input_tokens must be at least 2".into());
        }
        if self.max_target_tokens < 2 {
            return bad("max_target_tokens must be at least 2".into());
        }
        if self.vocab_size <= empdial_core::tokenizer::UNK as usize {
            return bad("vocabulary must include the special tokens".into());
        }
        if self.num_labels == 0 {
            return bad("num_labels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Rows of the shared position table.
    pub fn max_positions(&self) -> usize {
        self.max_input_tokens.max(self.max_target_tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 50);
    }

    #[test]
    fn rejects_bad_heads_and_budget() {
        let c = ModelConfig {
            num_heads: 7,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            max_input_tokens: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
