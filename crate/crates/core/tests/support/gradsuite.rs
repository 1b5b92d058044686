//! Finite-difference cases shared by the autodiff tests and the acceptance
//! run: every primitive op and each composite block of both stages.
#![allow(dead_code)]

use argus3d::autoencoder::{AutoencoderConfig, TriPlaneAutoencoder};
use argus3d::prior::{TransformerConfig, TransformerPrior};
use argus3d::tensor::gradcheck::{
    check_f32_against_f64, check_f32_against_f64_params, check_params, check_same_precision, CheckOptions,
    Differentiable,
};
use argus3d::tensor::{init, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use argus3d::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const F64_TOL: f64 = 1e-5;
pub const F32_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random projection weights keep gradients O(1) for every primitive.
fn project<T: Scalar>(g: &mut Graph<T>, x: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let w: Tensor<T> = init::uniform::<f32, _>(&shape, 1.0, &mut rng(seed)).cast();
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    g.sum(p)
}

#[derive(Clone, Copy, Debug)]
pub enum Prim {
    MatMul,
    Conv { stride: usize, pad: usize },
    Bilinear,
    Scatter,
    Relu,
    Sigmoid,
    LayerNorm,
    Softmax,
    CausalSoftmax,
    Embedding,
    AddMulSub,
    Concat,
    Narrow,
    Reshape,
    Transpose,
    CrossEntropy,
    Bce,
    Upsample,
    AddBias,
    Mean,
}

pub struct Case {
    pub prim: Prim,
}

impl Case {
    pub fn params(&self) -> ParamStore<f32> {
        let mut r = rng(7);
        let mut s = ParamStore::new();
        match self.prim {
            Prim::MatMul => {
                s.add("a", init::uniform(&[4, 5], 1.0, &mut r));
                s.add("b", init::uniform(&[5, 3], 1.0, &mut r));
            }
            Prim::Conv { .. } => {
                s.add("x", init::uniform(&[2, 6, 6], 1.0, &mut r));
                s.add("w", init::uniform(&[3, 2, 3, 3], 1.0, &mut r));
                s.add("b", init::uniform(&[3], 1.0, &mut r));
            }
            Prim::Bilinear => {
                s.add("plane", init::uniform(&[3, 5, 5], 1.0, &mut r));
            }
            Prim::Scatter => {
                s.add("f", init::uniform(&[7, 3], 1.0, &mut r));
            }
            Prim::Embedding => {
                s.add("table", init::uniform(&[6, 4], 1.0, &mut r));
            }
            Prim::LayerNorm => {
                s.add("x", init::uniform(&[3, 6], 2.0, &mut r));
                s.add("gain", init::uniform(&[6], 1.5, &mut r));
                s.add("bias", init::uniform(&[6], 1.0, &mut r));
            }
            Prim::CausalSoftmax => {
                s.add("x", init::uniform(&[4, 4], 2.0, &mut r));
            }
            Prim::AddBias => {
                s.add("x", init::uniform(&[3, 4], 1.0, &mut r));
                s.add("b", init::uniform(&[4], 1.0, &mut r));
            }
            Prim::Upsample => {
                s.add("x", init::uniform(&[2, 3, 3], 1.0, &mut r));
            }
            _ => {
                s.add("x", init::uniform(&[3, 4], 2.0, &mut r));
                s.add("y", init::uniform(&[3, 4], 2.0, &mut r));
            }
        }
        s
    }
}

impl Differentiable for Case {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>) -> Result<Var> {
        let v = |g: &mut Graph<T>, name: &str| g.param(p, p.id(name).unwrap());
        let out = match self.prim {
            Prim::MatMul => {
                let (a, b) = (v(g, "a"), v(g, "b"));
                g.matmul(a, b)?
            }
            Prim::Conv { stride, pad } => {
                let (x, w, b) = (v(g, "x"), v(g, "w"), v(g, "b"));
                g.conv2d(x, w, Some(b), stride, pad)?
            }
            Prim::Bilinear => {
                let plane = v(g, "plane");
                let uv: Vec<[T; 2]> = [[0.13, 0.77], [0.5, 0.5], [0.91, 0.02], [0.33, 0.61]]
                    .iter()
                    .map(|p| [T::from_f64(p[0]), T::from_f64(p[1])])
                    .collect();
                g.bilinear_sample(plane, &uv)?
            }
            Prim::Scatter => {
                let f = v(g, "f");
                g.scatter_mean(f, &[0, 3, 3, 8, 0, 0, 5], 3)?
            }
            Prim::Relu => {
                let x = v(g, "x");
                g.relu(x)?
            }
            Prim::Sigmoid => {
                let x = v(g, "x");
                g.sigmoid(x)?
            }
            Prim::LayerNorm => {
                let (x, gn, b) = (v(g, "x"), v(g, "gain"), v(g, "bias"));
                g.layer_norm(x, gn, b)?
            }
            Prim::Softmax => {
                let x = v(g, "x");
                g.softmax(x)?
            }
            Prim::CausalSoftmax => {
                let x = v(g, "x");
                g.causal_softmax(x)?
            }
            Prim::Embedding => {
                let tb = v(g, "table");
                g.embedding(tb, &[2, 0, 2, 5])?
            }
            Prim::AddMulSub => {
                let (x, y) = (v(g, "x"), v(g, "y"));
                let a = g.add(x, y)?;
                let m = g.mul(a, x)?;
                let s = g.sub(m, y)?;
                g.scale(s, T::from_f64(0.7))?
            }
            Prim::Concat => {
                let (x, y) = (v(g, "x"), v(g, "y"));
                let c0 = g.concat(&[x, y], 0)?;
                let c1 = g.concat(&[y, x], 1)?;
                let r = g.reshape(c1, &[6, 4])?;
                g.add(c0, r)?
            }
            Prim::Narrow => {
                let x = v(g, "x");
                let n = g.narrow(x, 1, 1, 2)?;
                g.narrow(n, 0, 1, 2)?
            }
            Prim::Reshape => {
                let x = v(g, "x");
                g.reshape(x, &[2, 6])?
            }
            Prim::Transpose => {
                let x = v(g, "x");
                g.transpose(x)?
            }
            Prim::CrossEntropy => {
                let x = v(g, "x");
                return g.cross_entropy(x, &[3, 0, 1]);
            }
            Prim::Bce => {
                let x = v(g, "x");
                let flat = g.reshape(x, &[12])?;
                let targets: Vec<T> = (0..12).map(|i| T::from_f64((i % 2) as f64)).collect();
                return g.bce_with_logits(flat, &targets);
            }
            Prim::Upsample => {
                let x = v(g, "x");
                g.upsample2x(x)?
            }
            Prim::AddBias => {
                let (x, b) = (v(g, "x"), v(g, "b"));
                g.add_bias(x, b)?
            }
            Prim::Mean => {
                let x = v(g, "x");
                let sq = g.mul(x, x)?;
                return g.mean(sq);
            }
        };
        project(g, out, 11)
    }
}

pub const ALL: &[Prim] = &[
    Prim::MatMul,
    Prim::Conv { stride: 1, pad: 1 },
    Prim::Conv { stride: 2, pad: 1 },
    Prim::Conv { stride: 1, pad: 0 },
    Prim::Bilinear,
    Prim::Scatter,
    Prim::Relu,
    Prim::Sigmoid,
    Prim::LayerNorm,
    Prim::Softmax,
    Prim::CausalSoftmax,
    Prim::Embedding,
    Prim::AddMulSub,
    Prim::Concat,
    Prim::Narrow,
    Prim::Reshape,
    Prim::Transpose,
    Prim::CrossEntropy,
    Prim::Bce,
    Prim::Upsample,
    Prim::AddBias,
    Prim::Mean,
];

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub f64_err: f64,
    pub f32_err: f64,
    /// Parameter holding the largest f64 error.
    pub worst: String,
}

impl Outcome {
    pub fn passes(&self) -> bool {
        self.f64_err < F64_TOL && self.f32_err < F32_TOL
    }
}

/// Every primitive with all of its entries checked.
pub fn primitive_outcomes() -> Vec<Outcome> {
    let opts = CheckOptions { max_per_param: 1000, ..CheckOptions::f64() };
    ALL.iter()
        .map(|&prim| {
            let case = Case { prim };
            let p = case.params();
            let r64 = check_same_precision::<f64, _>(&case, &p, &opts).unwrap();
            Outcome {
                name: format!("{prim:?}"),
                f64_err: r64.max_rel_err,
                // f32 analytic gradient, f64 central-difference reference
                f32_err: check_f32_against_f64(&case, &p, &opts).unwrap().max_rel_err,
                worst: format!("{}[{}]", r64.worst_param, r64.worst_index),
            }
        })
        .collect()
}

/// Narrow stage-one model: r = 16 so the decoder includes its inner level.
/// Biases are moved off zero so no ReLU input sits exactly on its kink
/// (empty plane cells would otherwise feed exact zeros).
pub fn tiny_autoencoder() -> TriPlaneAutoencoder {
    let cfg = AutoencoderConfig {
        n_points: 64,
        n_queries: 32,
        point_dim: 4,
        resolution: 16,
        plane_channels: 3,
        latent_dim: 4,
        codebook_size: 6,
        unet_channels: 4,
        head_hidden: 5,
        ..Default::default()
    };
    let mut model = TriPlaneAutoencoder::new(cfg, 3).unwrap();
    let biases: Vec<ParamId> = model.params.iter().filter(|(_, n, _)| n.ends_with(".b")).map(|(id, _, _)| id).collect();
    let mut r = rng(8);
    for id in biases {
        let shape = model.params.get(id).shape().to_vec();
        *model.params.get_mut(id) = init::uniform(&shape, 0.2, &mut r);
    }
    model
}

fn cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
    use rand::Rng;
    let mut r = rng(seed);
    (0..n).map(|_| [r.random_range(0.05..0.95), r.random_range(0.05..0.95), r.random_range(0.05..0.95)]).collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Block {
    PointMlp,
    PlaneCnn,
    UNet,
    OccupancyHead,
    TransformerBlock,
}

pub const BLOCKS: &[Block] = &[Block::PointMlp, Block::PlaneCnn, Block::UNet, Block::OccupancyHead, Block::TransformerBlock];

struct Stage1Case {
    block: Block,
    model: TriPlaneAutoencoder,
    points: Vec<[f64; 3]>,
    tokens: Tensor<f32>,
    planes: [Tensor<f32>; 3],
}

impl Differentiable for Stage1Case {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>) -> Result<Var> {
        let m = &self.model;
        match self.block {
            Block::PointMlp => {
                let planes = m.scatter_planes(g, p, &self.points)?;
                let all = g.concat(&planes, 0)?;
                project(g, all, 21)
            }
            Block::PlaneCnn => {
                let planes = m.encode_points(g, p, &self.points)?;
                let tokens = m.serialize(g, p, planes)?;
                project(g, tokens, 22)
            }
            Block::UNet => {
                let z = g.constant(self.tokens.cast());
                let planes = m.decode_planes(g, p, z)?;
                let all = g.concat(&planes, 0)?;
                project(g, all, 23)
            }
            Block::OccupancyHead => {
                let planes = self.planes.clone().map(|t| g.constant(t.cast()));
                let queries = cloud(24, 5);
                let logits = m.occupancy_logits(g, p, planes, &queries)?;
                let labels: Vec<T> = (0..24).map(|i| T::from_f64((i % 3 == 0) as u8 as f64)).collect();
                g.bce_with_logits(logits, &labels)
            }
            Block::TransformerBlock => unreachable!(),
        }
    }
}

struct PriorCase {
    model: TransformerPrior,
    x: Tensor<f32>,
}

impl Differentiable for PriorCase {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>) -> Result<Var> {
        let x = g.constant(self.x.cast());
        let y = self.model.block_forward(g, p, 0, x)?;
        project(g, y, 24)
    }
}

fn check<F: Differentiable>(name: String, f: &F, params: &ParamStore<f32>, ids: &[ParamId]) -> Outcome {
    // deep ReLU stacks put some pre-activations within 1e-4 of zero, so the
    // step is kept well below that
    let opts = CheckOptions {
        eps: 1e-6,
        max_per_param: 12,
        ..CheckOptions::f64()
    };
    let r64 = check_params::<f64, _>(f, params, ids, &opts).unwrap();
    Outcome {
        name,
        f64_err: r64.max_rel_err,
        f32_err: check_f32_against_f64_params(f, params, ids, &opts).unwrap().max_rel_err,
        worst: format!("{}[{}]", r64.worst_param, r64.worst_index),
    }
}

/// Each composite block checked on its own parameters, with at most 12
/// sampled entries per tensor.
pub fn composite_outcomes() -> Vec<Outcome> {
    let model = tiny_autoencoder();
    let groups = model.param_groups();
    let group = |name: &str| groups.iter().find(|(n, _)| *n == name).unwrap().1.clone();
    let cfg = model.config().clone();
    let r = cfg.resolution;
    let mut out = Vec::new();
    for &block in BLOCKS {
        let (ids, outcome) = match block {
            Block::TransformerBlock => {
                let prior = TransformerPrior::new(
                    TransformerConfig {
                        layers: 1,
                        dim: 8,
                        heads: 2,
                        codebook_size: 5,
                        seq_len: 4,
                        context: 5,
                        ..Default::default()
                    },
                    4,
                )
                .unwrap();
                let ids = prior.block_param_ids(0);
                let case = PriorCase { x: init::uniform(&[5, 8], 1.0, &mut rng(9)), model: prior };
                let o = check(format!("{block:?}"), &case, &case.model.params, &ids);
                (ids, o)
            }
            _ => {
                let ids = match block {
                    Block::PointMlp => group("point_mlp"),
                    Block::PlaneCnn => [group("plane_cnn"), group("projection")].concat(),
                    Block::UNet => group("unet"),
                    _ => group("head"),
                };
                let case = Stage1Case {
                    block,
                    model: model.clone(),
                    points: cloud(cfg.n_points, 1),
                    tokens: init::uniform(&[cfg.tokens(), cfg.latent_dim], 1.0, &mut rng(2)),
                    planes: [3, 4, 5].map(|s| init::uniform(&[cfg.plane_channels, r, r], 1.0, &mut rng(s))),
                };
                let o = check(format!("{block:?}"), &case, &model.params, &ids);
                (ids, o)
            }
        };
        assert!(!ids.is_empty());
        out.push(outcome);
    }
    out
}
