use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Transformer hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub d_ff: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            vocab_size: 512,
            max_seq: 256,
            d_ff: 512,
            lora_rank: 8,
            lora_scale: 2.0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for quick runs.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            vocab_size,
            max_seq: 64,
            d_ff: 64,
            lora_rank: 4,
            lora_scale: 2.0,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
            ("d_ff", self.d_ff),
            ("lora_rank", self.lora_rank),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(CoreError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if 2 * self.lora_rank > self.d_model {
            return Err(CoreError::Config(format!(
                "LoRA rank {} exceeds half of d_model {}",
                self.lora_rank, self.d_model
            )));
        }
        if !(self.lora_scale.is_finite() && self.lora_scale > 0.0) {
            return Err(CoreError::Config("lora_scale must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.d_k(), 32);
        assert_eq!(c.d_ff, 4 * c.d_model);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = ModelConfig::default();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.lora_rank = 65;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.n_layers = 0;
        assert!(c.validate().is_err());
    }
}
