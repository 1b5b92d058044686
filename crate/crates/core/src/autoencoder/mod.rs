//! Stage one: tri-plane occupancy autoencoder with a quantized bottleneck.
//!
//! Points are lifted by a shared MLP, mean-scattered onto the xy, xz and yz
//! planes and refined by a small CNN. Three stride-2 convolutions bring each
//! plane from `r×r` to `r̄×r̄` with `r̄ = r/8`; the planes are fused
//! channel-wise, projected to `d` channels and read out row-major as
//! `m = r̄²` tokens plus a learned positional embedding. After quantization a
//! U-Net restores three `c×r×r` planes, and the occupancy of a query point is
//! an MLP of the sum of its three bilinearly sampled plane features.

mod config;
mod model;
mod train;

pub use config::{AutoencoderConfig, Stage1TrainConfig};
pub use model::{reconstruction_loss, LossParts, Stage1Forward, TriPlaneAutoencoder, PLANES};
pub use train::{mean_iou, train_stage1, EpochLog, Stage1Report};
