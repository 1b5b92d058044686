use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Transformer shape. The vocabulary is `codebook_size + 1`: the extra row
/// is the start-of-sequence token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    /// Codebook entries `K`; the model predicts one of these per position.
    pub codebook_size: usize,
    /// Indices per shape, `m`.
    pub seq_len: usize,
    /// Positional table rows; at least `m + 1`.
    pub context: usize,
    /// Size of the class-label table; 0 disables class conditioning.
    pub num_classes: usize,
    /// Width of external condition embeddings; 0 disables them.
    pub embed_dim: usize,
    /// MLP hidden width as a multiple of `dim`.
    pub mlp_ratio: usize,
}

impl Default for TransformerConfig {
    /// Desk configuration: 4 layers, width 128, 4 heads, for 16-token
    /// sequences over a 64-entry codebook.
    fn default() -> Self {
        TransformerConfig {
            layers: 4,
            dim: 128,
            heads: 4,
            codebook_size: 64,
            seq_len: 16,
            context: 17,
            num_classes: 0,
            embed_dim: 0,
            mlp_ratio: 4,
        }
    }
}

impl TransformerConfig {
    fn preset(layers: usize, dim: usize, heads: usize) -> Self {
        // 8192 × 512 codebook over a 256² plane: 32² = 1024 tokens
        TransformerConfig {
            layers,
            dim,
            heads,
            codebook_size: 8192,
            seq_len: 1024,
            context: 1025,
            num_classes: 0,
            embed_dim: 0,
            mlp_ratio: 4,
        }
    }

    /// 12 layers, width 768, 12 heads.
    pub fn small() -> Self {
        Self::preset(12, 768, 12)
    }

    /// 24 layers, width 2048, 16 heads.
    pub fn large() -> Self {
        Self::preset(24, 2048, 16)
    }

    /// 32 layers, width 3072, 24 heads.
    pub fn huge() -> Self {
        Self::preset(32, 3072, 24)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return config_err("layers, dim, heads and mlp_ratio must be positive");
        }
        if self.dim % self.heads != 0 {
            return config_err(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if self.codebook_size < 2 {
            return config_err("codebook_size must be at least 2");
        }
        if self.seq_len == 0 || self.context < self.seq_len + 1 {
            return config_err(format!(
                "context {} must be at least seq_len + 1 = {}",
                self.context,
                self.seq_len + 1
            ));
        }
        Ok(())
    }

    /// Index of the start-of-sequence row in the token table.
    pub fn sos(&self) -> usize {
        self.codebook_size
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// What the first input position carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    None,
    Class(usize),
    Embedding(Vec<f32>),
}

/// Ancestral decoding settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    pub temperature: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            temperature: 1.0,
            top_k: 100,
            seed: 0,
        }
    }
}

impl SamplingPolicy {
    pub fn greedy() -> Self {
        SamplingPolicy {
            temperature: 1.0,
            top_k: 1,
            seed: 0,
        }
    }

    /// Default policy with `top_k` capped at the codebook size.
    pub fn for_codebook(k: usize, seed: u64) -> Self {
        SamplingPolicy {
            top_k: 100.min(k),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return config_err(format!("temperature {} must be positive and finite", self.temperature));
        }
        if self.top_k == 0 || self.top_k > k {
            return config_err(format!("top_k {} must lie in [1, {k}]", self.top_k));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_final_factor: f64,
    pub seed: u64,
    /// Probability of training a sample with its condition replaced by the
    /// start token.
    pub condition_dropout: f64,
    /// Stop once the epoch's mean per-token NLL falls below this value.
    pub target_nll: Option<f64>,
}

impl Default for Stage2TrainConfig {
    fn default() -> Self {
        Stage2TrainConfig {
            epochs: 200,
            batch_size: 16,
            lr: 1e-3,
            lr_final_factor: 0.1,
            seed: 0,
            condition_dropout: 0.0,
            target_nll: None,
        }
    }
}
