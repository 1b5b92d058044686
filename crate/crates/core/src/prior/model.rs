use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{Condition, TransformerConfig};
use crate::error::{contract_err, dim_err, Error, Result};
use crate::tensor::{init, Checkpoint, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Every parameter the model allocates for `cfg`, in registration order,
/// without allocating anything.
pub fn param_walk(cfg: &TransformerConfig) -> Vec<(String, Vec<usize>)> {
    let (d, k) = (cfg.dim, cfg.codebook_size);
    let hidden = cfg.mlp_ratio * d;
    let mut out: Vec<(String, Vec<usize>)> = vec![
        ("prior.tok_embed".into(), vec![k + 1, d]),
        ("prior.pos_embed".into(), vec![cfg.context, d]),
    ];
    if cfg.num_classes > 0 {
        out.push(("prior.class_embed".into(), vec![cfg.num_classes, d]));
    }
    if cfg.embed_dim > 0 {
        out.push(("prior.cond_proj.w".into(), vec![cfg.embed_dim, d]));
        out.push(("prior.cond_proj.b".into(), vec![d]));
    }
    for l in 0..cfg.layers {
        let p = format!("prior.block{l}");
        for (name, shape) in [
            ("ln1.gain", vec![d]),
            ("ln1.bias", vec![d]),
            ("attn.qkv.w", vec![d, 3 * d]),
            ("attn.qkv.b", vec![3 * d]),
            ("attn.out.w", vec![d, d]),
            ("attn.out.b", vec![d]),
            ("ln2.gain", vec![d]),
            ("ln2.bias", vec![d]),
            ("mlp.fc.w", vec![d, hidden]),
            ("mlp.fc.b", vec![hidden]),
            ("mlp.proj.w", vec![hidden, d]),
            ("mlp.proj.b", vec![d]),
        ] {
            out.push((format!("{p}.{name}"), shape));
        }
    }
    out.push(("prior.ln_f.gain".into(), vec![d]));
    out.push(("prior.ln_f.bias".into(), vec![d]));
    out.push(("prior.head.w".into(), vec![d, k]));
    out.push(("prior.head.b".into(), vec![k]));
    out
}

/// Closed-form parameter count: embeddings, `L` blocks of
/// `(4 + 2ρ)D² + (9 + ρ)D` (ρ the MLP ratio, so `12D² + 13D` at ρ = 4),
/// the final norm and the output head.
pub fn count_params(cfg: &TransformerConfig) -> u64 {
    let (d, k, l) = (cfg.dim as u64, cfg.codebook_size as u64, cfg.layers as u64);
    let rho = cfg.mlp_ratio as u64;
    let embeddings = (k + 1) * d + cfg.context as u64 * d + cfg.num_classes as u64 * d;
    let condition = if cfg.embed_dim > 0 { cfg.embed_dim as u64 * d + d } else { 0 };
    let block = (4 + 2 * rho) * d * d + (9 + rho) * d;
    embeddings + condition + l * block + 2 * d + d * k + k
}

#[derive(Clone, Debug)]
pub(crate) struct BlockIds {
    pub ln1: (ParamId, ParamId),
    pub qkv: (ParamId, ParamId),
    pub out: (ParamId, ParamId),
    pub ln2: (ParamId, ParamId),
    pub fc: (ParamId, ParamId),
    pub proj: (ParamId, ParamId),
}

/// The stage-two model and its parameters.
#[derive(Clone, Debug)]
pub struct TransformerPrior {
    pub(crate) cfg: TransformerConfig,
    pub params: ParamStore<f32>,
    pub(crate) tok: ParamId,
    pub(crate) pos: ParamId,
    pub(crate) class: Option<ParamId>,
    pub(crate) cond: Option<(ParamId, ParamId)>,
    pub(crate) blocks: Vec<BlockIds>,
    pub(crate) ln_f: (ParamId, ParamId),
    pub(crate) head: (ParamId, ParamId),
}

impl TransformerPrior {
    /// Weights ~ N(0, 0.02²) with residual output projections scaled by
    /// `1/√(2L)`, zero biases and unit norm gains.
    pub fn new(cfg: TransformerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let residual_std = 0.02 / (2.0 * cfg.layers as f64).sqrt();
        for (name, shape) in param_walk(&cfg) {
            let t = if name.ends_with(".gain") {
                Tensor::full(&shape, 1.0)
            } else if name.ends_with(".b") || name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else if name.ends_with("attn.out.w") || name.ends_with("mlp.proj.w") {
                init::normal(&shape, residual_std, &mut rng)
            } else {
                init::normal(&shape, 0.02, &mut rng)
            };
            store.add(name, t);
        }
        let id = |n: &str| store.id(n).expect("walked parameter");
        let pair = |a: &str, b: &str| (id(a), id(b));
        let blocks = (0..cfg.layers)
            .map(|l| {
                let p = format!("prior.block{l}");
                BlockIds {
                    ln1: pair(&format!("{p}.ln1.gain"), &format!("{p}.ln1.bias")),
                    qkv: pair(&format!("{p}.attn.qkv.w"), &format!("{p}.attn.qkv.b")),
                    out: pair(&format!("{p}.attn.out.w"), &format!("{p}.attn.out.b")),
                    ln2: pair(&format!("{p}.ln2.gain"), &format!("{p}.ln2.bias")),
                    fc: pair(&format!("{p}.mlp.fc.w"), &format!("{p}.mlp.fc.b")),
                    proj: pair(&format!("{p}.mlp.proj.w"), &format!("{p}.mlp.proj.b")),
                }
            })
            .collect();
        Ok(TransformerPrior {
            tok: id("prior.tok_embed"),
            pos: id("prior.pos_embed"),
            class: store.id("prior.class_embed"),
            cond: store.id("prior.cond_proj.w").map(|w| (w, id("prior.cond_proj.b"))),
            blocks,
            ln_f: pair("prior.ln_f.gain", "prior.ln_f.bias"),
            head: pair("prior.head.w", "prior.head.b"),
            params: store,
            cfg,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn check_condition(&self, cond: &Condition) -> Result<()> {
        match cond {
            Condition::None => Ok(()),
            Condition::Class(c) if *c < self.cfg.num_classes => Ok(()),
            Condition::Class(c) => contract_err(format!(
                "class {c} outside the {} trained classes",
                self.cfg.num_classes
            )),
            Condition::Embedding(v) if self.cfg.embed_dim > 0 && v.len() == self.cfg.embed_dim => {
                if v.iter().all(|x| x.is_finite()) {
                    Ok(())
                } else {
                    contract_err("condition embedding contains non-finite values")
                }
            }
            Condition::Embedding(v) => dim_err(format!(
                "condition embedding of width {} but the model expects {}",
                v.len(),
                self.cfg.embed_dim
            )),
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.cfg.codebook_size) {
            Some(t) => contract_err(format!("index {t} outside codebook of {}", self.cfg.codebook_size)),
            None => Ok(()),
        }
    }

    /// The `1 × D` vector occupying the first position.
    fn first_position<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, cond: &Condition) -> Result<Var> {
        match cond {
            Condition::None => {
                let tok = g.param(store, self.tok);
                g.embedding(tok, &[self.cfg.sos()])
            }
            Condition::Class(c) => {
                let table = g.param(store, self.class.expect("checked"));
                g.embedding(table, &[*c])
            }
            Condition::Embedding(v) => {
                let (w, b) = self.cond.expect("checked");
                let x = g.constant(Tensor::new(vec![1, v.len()], v.iter().map(|&e| T::from_f64(e as f64)).collect())?);
                let (w, b) = (g.param(store, w), g.param(store, b));
                let y = g.matmul(x, w)?;
                g.add_bias(y, b)
            }
        }
    }

    fn linear<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let (w, b) = (g.param(store, w), g.param(store, b));
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    fn norm<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, (gain, bias): (ParamId, ParamId)) -> Result<Var> {
        let (gain, bias) = (g.param(store, gain), g.param(store, bias));
        g.layer_norm(x, gain, bias)
    }

    /// One pre-norm block on an `n × D` residual stream.
    pub(crate) fn block<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, ids: &BlockIds, x: Var) -> Result<Var> {
        let (d, hd) = (self.cfg.dim, self.cfg.head_dim());
        let h = Self::norm(g, store, x, ids.ln1)?;
        let qkv = Self::linear(g, store, h, ids.qkv)?;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for head in 0..self.cfg.heads {
            let q = g.narrow(qkv, 1, head * hd, hd)?;
            let k = g.narrow(qkv, 1, d + head * hd, hd)?;
            let v = g.narrow(qkv, 1, 2 * d + head * hd, hd)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale)?;
            let att = g.causal_softmax(scores)?;
            heads.push(g.matmul(att, v)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        let attn = Self::linear(g, store, cat, ids.out)?;
        let x = g.add(x, attn)?;
        let h = Self::norm(g, store, x, ids.ln2)?;
        let f = Self::linear(g, store, h, ids.fc)?;
        let f = g.relu(f)?;
        let f = Self::linear(g, store, f, ids.proj)?;
        g.add(x, f)
    }

    /// Block `layer` alone on a given residual stream, for gradient checks.
    pub fn block_forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, layer: usize, x: Var) -> Result<Var> {
        self.block(g, store, &self.blocks[layer], x)
    }

    pub fn block_param_ids(&self, layer: usize) -> Vec<ParamId> {
        let b = &self.blocks[layer];
        [b.ln1, b.qkv, b.out, b.ln2, b.fc, b.proj].iter().flat_map(|&(a, b)| [a, b]).collect()
    }

    /// Next-index logits (`(1 + len) × K`) for the input row
    /// `[condition or start, prefix…]`.
    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, prefix: &[usize], cond: &Condition) -> Result<Var> {
        self.check_condition(cond)?;
        self.check_tokens(prefix)?;
        let n = prefix.len() + 1;
        if n > self.cfg.context {
            return dim_err(format!("{n} positions exceed the context of {}", self.cfg.context));
        }
        let first = self.first_position(g, store, cond)?;
        let x = if prefix.is_empty() {
            first
        } else {
            let tok = g.param(store, self.tok);
            let rest = g.embedding(tok, prefix)?;
            g.concat(&[first, rest], 0)?
        };
        let pos = g.param(store, self.pos);
        let pos = g.narrow(pos, 0, 0, n)?;
        let mut x = g.add(x, pos)?;
        for ids in &self.blocks {
            x = self.block(g, store, ids, x)?;
        }
        let x = Self::norm(g, store, x, self.ln_f)?;
        Self::linear(g, store, x, self.head)
    }

    /// Mean per-token negative log-likelihood `−(1/m) Σ log p(z_i | c, z_<i)`.
    pub fn nll_loss<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, seq: &[usize], cond: &Condition) -> Result<Var> {
        if seq.len() != self.cfg.seq_len {
            return dim_err(format!("sequence of length {} but the model expects {}", seq.len(), self.cfg.seq_len));
        }
        self.check_tokens(seq)?;
        let logits = self.logits(g, store, &seq[..seq.len() - 1], cond)?;
        g.cross_entropy(logits, seq)
    }

    /// Per-token NLL of `seq` evaluated in `f64`.
    pub fn nll(&self, seq: &[usize], cond: &Condition) -> Result<f64> {
        let store: ParamStore<f64> = self.params.cast();
        let mut g = Graph::new();
        let l = self.nll_loss(&mut g, &store, seq, cond)?;
        Ok(g.value(l).item())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_params("", &self.params);
        ck.meta = Some(json!({ "model": "transformer_prior", "config": self.cfg }));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = ck
            .meta
            .as_ref()
            .filter(|m| m["model"] == "transformer_prior")
            .ok_or_else(|| Error::Checkpoint("not a stage-two checkpoint".into()))?;
        let cfg: TransformerConfig = serde_json::from_value(meta["config"].clone())?;
        let mut model = Self::new(cfg, 0)?;
        model.params.load_named(ck.tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        if !model.params.all_finite() {
            return Err(Error::Checkpoint("stage-two parameters contain non-finite values".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
