//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Learnable values
//! live in a [`ParamStore`] and enter a graph through [`Graph::param`]; after
//! [`Graph::backward`] their gradients are collected with
//! [`Graph::param_grads`] and applied with [`Adam`].
//!
//! All operations are generic over [`Scalar`] so the same model code can be
//! re-run in `f64` for gradient checking.

mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod scalar;
#[allow(clippy::module_inception)]
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{sigmoid, softmax_row, Graph, Var, LN_EPS};
pub use optim::{cosine_lr, Adam, AdamConfig, OptimState};
pub use params::{init, Grads, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
