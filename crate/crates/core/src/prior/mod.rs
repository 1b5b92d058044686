//! Stage two: a decoder-only transformer over codebook index sequences.
//!
//! A shape is the sequence `z_1 … z_m` of its stage-one indices. The model
//! factorises `p(z | c) = Π p(z_i | c, z_<i)`: the first input position holds
//! either a learned start token or the condition vector (a class embedding
//! or a linear map of an external embedding), followed by `z_1 … z_{m−1}`.
//! Blocks are pre-norm with causal multi-head attention and a ReLU MLP.

mod config;
mod model;
mod sampling;
mod train;

pub use config::{Condition, SamplingPolicy, Stage2TrainConfig, TransformerConfig};
pub use model::{count_params, param_walk, TransformerPrior};
pub use sampling::{generate, Generated, KvCache, Sample};
pub use train::{train_stage2, Stage2EpochLog, Stage2Report};
