use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Condition, SamplingPolicy, TransformerPrior};
use crate::autoencoder::TriPlaneAutoencoder;
use crate::error::{dim_err, Result};
use crate::geometry::{marching_cubes, Mesh, OccupancyGrid};
use crate::tensor::{ParamId, LN_EPS};

/// Keys and values of every processed position, per layer.
pub struct KvCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One decoded sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
    /// `Σ log p(z_i | c, z_<i)` under the model itself (temperature 1, no
    /// truncation), whatever policy drew the indices.
    pub log_prob: f64,
}

/// A sampled sequence decoded to a surface.
#[derive(Clone, Debug)]
pub struct Generated {
    pub sample: Sample,
    pub grid: OccupancyGrid,
    pub mesh: Mesh,
}

fn layer_norm(x: &[f32], gain: &[f32], bias: &[f32]) -> Vec<f32> {
    let d = x.len() as f32;
    let mean = x.iter().sum::<f32>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d;
    let rs = 1.0 / (var + LN_EPS as f32).sqrt();
    x.iter().zip(gain).zip(bias).map(|((v, g), b)| (v - mean) * rs * g + b).collect()
}

fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = logits.iter().map(|&l| (l as f64 - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&l| l as f64 - lse).collect()
}

impl TransformerPrior {
    fn affine(&self, x: &[f32], (w, b): (ParamId, ParamId)) -> Vec<f32> {
        let w = self.params.get(w);
        let n = w.shape()[1];
        let mut out = self.params.get(b).data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &wv) in out.iter_mut().zip(&w.data()[i * n..(i + 1) * n]) {
                *o += xi * wv;
            }
        }
        out
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache {
            keys: vec![Vec::new(); self.cfg.layers],
            values: vec![Vec::new(); self.cfg.layers],
            len: 0,
        }
    }

    fn input_vector(&self, pos: usize, token: Option<usize>, cond: &Condition) -> Vec<f32> {
        let d = self.cfg.dim;
        let mut x = match (token, cond) {
            (Some(t), _) => self.params.get(self.tok).row(t).to_vec(),
            (None, Condition::None) => self.params.get(self.tok).row(self.cfg.sos()).to_vec(),
            (None, Condition::Class(c)) => self.params.get(self.class.expect("checked")).row(*c).to_vec(),
            (None, Condition::Embedding(v)) => self.affine(v, self.cond.expect("checked")),
        };
        let p = &self.params.get(self.pos).data()[pos * d..(pos + 1) * d];
        x.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        x
    }

    /// Runs one position through the network, extending the cache, and
    /// returns its `K` next-index logits.
    fn step(&self, cache: &mut KvCache, mut x: Vec<f32>) -> Vec<f32> {
        let (d, hd, heads) = (self.cfg.dim, self.cfg.head_dim(), self.cfg.heads);
        let t = cache.len;
        let scale = 1.0 / (hd as f32).sqrt();
        for (l, ids) in self.blocks.iter().enumerate() {
            let h = layer_norm(&x, self.params.get(ids.ln1.0).data(), self.params.get(ids.ln1.1).data());
            let qkv = self.affine(&h, ids.qkv);
            cache.keys[l].extend_from_slice(&qkv[d..2 * d]);
            cache.values[l].extend_from_slice(&qkv[2 * d..]);
            let (keys, values) = (&cache.keys[l], &cache.values[l]);
            let mut cat = vec![0.0f32; d];
            for head in 0..heads {
                let q = &qkv[head * hd..(head + 1) * hd];
                let mut scores: Vec<f32> = (0..=t)
                    .map(|j| {
                        let k = &keys[j * d + head * hd..j * d + (head + 1) * hd];
                        q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale
                    })
                    .collect();
                crate::tensor::softmax_row(&mut scores);
                let out = &mut cat[head * hd..(head + 1) * hd];
                for (j, &a) in scores.iter().enumerate() {
                    let v = &values[j * d + head * hd..j * d + (head + 1) * hd];
                    out.iter_mut().zip(v).for_each(|(o, &vv)| *o += a * vv);
                }
            }
            let attn = self.affine(&cat, ids.out);
            x.iter_mut().zip(&attn).for_each(|(a, b)| *a += b);
            let h = layer_norm(&x, self.params.get(ids.ln2.0).data(), self.params.get(ids.ln2.1).data());
            let mut f = self.affine(&h, ids.fc);
            f.iter_mut().for_each(|v| *v = v.max(0.0));
            let f = self.affine(&f, ids.proj);
            x.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
        }
        cache.len += 1;
        let x = layer_norm(&x, self.params.get(self.ln_f.0).data(), self.params.get(self.ln_f.1).data());
        self.affine(&x, self.head)
    }

    /// Logits for every position of `[condition, prefix…]` computed
    /// incrementally through the cache.
    pub fn cached_logits(&self, prefix: &[usize], cond: &Condition) -> Result<Vec<Vec<f32>>> {
        self.check_condition(cond)?;
        if prefix.len() + 1 > self.cfg.context {
            return dim_err("prefix exceeds the context");
        }
        let mut cache = self.new_cache();
        let mut out = vec![self.step(&mut cache, self.input_vector(0, None, cond))];
        for (i, &t) in prefix.iter().enumerate() {
            if t >= self.cfg.codebook_size {
                return crate::error::contract_err(format!("index {t} outside the codebook"));
            }
            out.push(self.step(&mut cache, self.input_vector(i + 1, Some(t), cond)));
        }
        Ok(out)
    }

    /// Draws `m` indices left to right. Each index comes from the
    /// temperature-scaled softmax restricted to the `top_k` largest logits
    /// (ties to the lower index); `top_k = 1` is greedy decoding.
    pub fn sample(&self, cond: &Condition, policy: &SamplingPolicy) -> Result<Sample> {
        self.check_condition(cond)?;
        policy.validate(self.cfg.codebook_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
        let mut cache = self.new_cache();
        let mut indices = Vec::with_capacity(self.cfg.seq_len);
        let mut log_prob = 0.0;
        for pos in 0..self.cfg.seq_len {
            let x = self.input_vector(pos, indices.last().copied(), cond);
            let logits = self.step(&mut cache, x);
            let choice = pick(&logits, policy, &mut rng);
            log_prob += log_softmax(&logits)[choice];
            indices.push(choice);
        }
        Ok(Sample { indices, log_prob })
    }
}

fn pick<R: Rng>(logits: &[f32], policy: &SamplingPolicy, rng: &mut R) -> usize {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(policy.top_k);
    if order.len() == 1 {
        return order[0];
    }
    let scaled: Vec<f32> = order.iter().map(|&i| (logits[i] as f64 / policy.temperature) as f32).collect();
    let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&i, p) in order.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return i;
        }
    }
    *order.last().unwrap()
}

/// Samples a sequence and decodes it with the stage-one model to an `R³`
/// grid and a marching-cubes mesh.
pub fn generate(
    prior: &TransformerPrior,
    stage1: &TriPlaneAutoencoder,
    cond: &Condition,
    policy: &SamplingPolicy,
    resolution: usize,
) -> Result<Generated> {
    let s1 = stage1.config();
    if s1.tokens() != prior.cfg.seq_len || s1.codebook_size != prior.cfg.codebook_size {
        return dim_err(format!(
            "prior expects {} tokens over {} entries, stage one produces {} over {}",
            prior.cfg.seq_len,
            prior.cfg.codebook_size,
            s1.tokens(),
            s1.codebook_size
        ));
    }
    let sample = prior.sample(cond, policy)?;
    let grid = stage1.decode_indices(&sample.indices, resolution)?;
    let mesh = marching_cubes(&grid, 0.5)?.mesh;
    Ok(Generated { sample, grid, mesh })
}
