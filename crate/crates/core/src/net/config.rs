use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    #[default]
    Fixed,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub text_dim: usize,
    pub adapter_blocks: Vec<usize>,
    pub n_cond_tokens: usize,
    pub adapter_dim: usize,
    pub lora_rank: usize,
    /// LoRA scale numerator; the applied scale is `lora_alpha / lora_rank`.
    pub lora_alpha: f64,
    pub gate: f64,
    pub gate_mode: GateMode,
    /// Seed of the frozen backbone weights.
    pub seed: u64,
}

/// Deepest third by index: `⌈2n/3⌉ .. n`.
pub fn default_adapter_blocks(n_blocks: usize) -> Vec<usize> {
    ((2 * n_blocks).div_ceil(3)..n_blocks).collect()
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_blocks(12)
    }
}

impl ModelConfig {
    fn with_blocks(n_blocks: usize) -> Self {
        Self {
            n_blocks,
            model_dim: 64,
            n_heads: 4,
            text_dim: 64,
            adapter_blocks: default_adapter_blocks(n_blocks),
            n_cond_tokens: 4,
            adapter_dim: 256,
            lora_rank: 32,
            lora_alpha: 32.0,
            gate: 0.5,
            gate_mode: GateMode::Fixed,
            seed: 0,
        }
    }

    /// Small dimensions for gradient checks and unit tests.
    pub fn tiny() -> Self {
        Self {
            n_blocks: 3,
            model_dim: 8,
            n_heads: 2,
            text_dim: 6,
            adapter_blocks: default_adapter_blocks(3),
            n_cond_tokens: 2,
            adapter_dim: 5,
            lora_rank: 2,
            lora_alpha: 2.0,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    pub fn is_adapter_block(&self, i: usize) -> bool {
        self.adapter_blocks.contains(&i)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_blocks == 0 || self.model_dim == 0 || self.text_dim == 0 {
            return bad("n_blocks, model_dim and text_dim must be positive".into());
        }
        if self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            ));
        }
        if let Some(b) = self.adapter_blocks.iter().find(|&&b| b >= self.n_blocks) {
            return bad(format!("adapter block {b} outside [0, {})", self.n_blocks));
        }
        let mut sorted = self.adapter_blocks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.adapter_blocks.len() {
            return bad("adapter_blocks contains duplicates".into());
        }
        if self.lora_rank == 0 || self.lora_rank >= self.model_dim.min(self.text_dim) {
            return bad(format!(
                "lora_rank {} must be in [1, min(model_dim, text_dim))",
                self.lora_rank
            ));
        }
        if self.n_cond_tokens == 0 || self.adapter_dim == 0 {
            return bad("n_cond_tokens and adapter_dim must be positive".into());
        }
        if !self.gate.is_finite() || !self.lora_alpha.is_finite() {
            return bad("gate and lora_alpha must be finite".into());
        }
        Ok(())
    }
}

/// AdamW with linear warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    /// When false only the conditional adapters are trained.
    pub train_lora: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.01,
            eps: 1e-8,
            train_lora: true,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} invalid", self.lr)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::Config("weight_decay >= 0 and eps > 0 required".into()));
        }
        Ok(())
    }

    /// Learning rate at 1-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * (step.min(self.warmup_steps) as f64 / self.warmup_steps as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deepest_third() {
        assert_eq!(default_adapter_blocks(12), vec![8, 9, 10, 11]);
        assert_eq!(default_adapter_blocks(3), vec![2]);
        assert_eq!(default_adapter_blocks(40), (27..40).collect::<Vec<_>>());
    }

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        let c = ModelConfig::default();
        assert_eq!((c.n_cond_tokens, c.adapter_dim, c.lora_rank, c.gate), (4, 256, 32, 0.5));
        let o = OptimConfig::default();
        assert_eq!((o.lr, o.warmup_steps, o.beta1, o.beta2, o.weight_decay), (2e-5, 100, 0.9, 0.99, 0.01));
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::default();
        c.adapter_blocks.push(12);
        assert!(c.validate().is_err());
        let c = ModelConfig {
            lora_rank: 64,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            n_heads: 5,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn warmup_is_linear() {
        let o = OptimConfig {
            lr: 1.0,
            warmup_steps: 4,
            ..OptimConfig::default()
        };
        assert_eq!(o.lr_at(1), 0.25);
        assert_eq!(o.lr_at(4), 1.0);
        assert_eq!(o.lr_at(100), 1.0);
    }
}
