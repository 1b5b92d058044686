use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Architecture of the stage-one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    /// Encoder input points per shape.
    pub n_points: usize,
    /// Labelled query points per shape and training step.
    pub n_queries: usize,
    /// Width of the shared per-point MLP.
    pub point_dim: usize,
    /// Plane resolution `r`; must be a multiple of 8.
    pub resolution: usize,
    /// Channels `c` per plane.
    pub plane_channels: usize,
    /// Token width `d`, equal to the codebook entry width.
    pub latent_dim: usize,
    /// Codebook entries `K`.
    pub codebook_size: usize,
    /// Commitment weight β.
    pub beta: f64,
    pub unet_channels: usize,
    pub head_hidden: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            n_points: 2048,
            n_queries: 2048,
            point_dim: 32,
            resolution: 32,
            plane_channels: 32,
            latent_dim: 32,
            codebook_size: 64,
            beta: 0.4,
            unet_channels: 64,
            head_hidden: 64,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 8 != 0 {
            return config_err(format!("plane resolution {} is not a positive multiple of 8", self.resolution));
        }
        if self.codebook_size < 2 {
            return config_err("codebook needs at least two entries");
        }
        for (name, v) in [
            ("n_points", self.n_points),
            ("n_queries", self.n_queries),
            ("point_dim", self.point_dim),
            ("plane_channels", self.plane_channels),
            ("latent_dim", self.latent_dim),
            ("unet_channels", self.unet_channels),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return config_err(format!("{name} must be positive"));
            }
        }
        if self.unet_channels < 2 {
            return config_err("unet_channels must be at least 2");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return config_err(format!("beta {} must be a finite non-negative number", self.beta));
        }
        Ok(())
    }

    /// `r̄ = r / 8`.
    pub fn latent_resolution(&self) -> usize {
        self.resolution / 8
    }

    /// Tokens per shape, `m = r̄²`.
    pub fn tokens(&self) -> usize {
        self.latent_resolution().pow(2)
    }
}

/// Optimisation settings for stage one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay from `lr` to `lr · lr_final_factor` over all epochs.
    pub lr_final_factor: f64,
    pub seed: u64,
    /// Validate every this many epochs (and always after the last one).
    pub val_every: usize,
    pub val_resolution: usize,
    /// Reseed unused codebook rows from encoder outputs after each epoch.
    pub revive_dead_entries: bool,
    /// Stop as soon as the validation IoU reaches this value.
    pub target_iou: Option<f64>,
}

impl Default for Stage1TrainConfig {
    fn default() -> Self {
        Stage1TrainConfig {
            epochs: 60,
            batch_size: 8,
            lr: 1e-3,
            lr_final_factor: 0.1,
            seed: 0,
            val_every: 5,
            val_resolution: 32,
            revive_dead_entries: false,
            target_iou: None,
        }
    }
}
