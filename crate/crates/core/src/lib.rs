//! Two-stage discrete shape generation on CPU.
//!
//! Stage one learns a tri-plane occupancy autoencoder whose bottleneck is a
//! learned codebook, so every shape becomes a short sequence of codebook
//! indices. Stage two fits a causal transformer over those sequences, with
//! optional class or embedding conditioning. The crate also carries the
//! geometry needed to feed and score the models (parametric solids, point
//! sampling, marching cubes, mesh IO) and the usual generative-shape metrics
//! (Chamfer, EMD, MMD, COV, 1-NNA, ECD, TMD, Fréchet distance).
//!
//! Everything runs on a small reverse-mode autodiff engine in [`tensor`].
//! Runnable walkthroughs live under `examples/`:
//!
//! ```bash
//! cargo run --release -p argus3d --example gradient_check
//! cargo run --release -p argus3d --example marching_cubes_sphere
//! cargo run --release -p argus3d --example codebook_quantization
//! cargo run --release -p argus3d --example train_stage1_toy
//! cargo run --release -p argus3d --example prior_overfit
//! cargo run --release -p argus3d --example class_conditional_generation
//! cargo run --release -p argus3d --example shape_metrics
//! cargo run --release -p argus3d --example cli_pipeline
//! ```

pub mod autoencoder;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod prior;
pub mod quantizer;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
