//! Nearest-entry vector quantization with a learned codebook.
//!
//! Each token `z_v[t]` is replaced by its Euclidean-nearest codebook row.
//! Training uses the straight-through estimator for the encoder and the loss
//! `‖sg[z_v] − z_q‖² + β‖sg[z_q] − z_v‖²` (mean over tokens) for the
//! codebook and the commitment pull.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{config_err, dim_err, Result};
use crate::tensor::{init, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

pub const DEFAULT_BETA: f64 = 0.4;

/// Name of the codebook tensor inside checkpoints.
pub const CODEBOOK_PARAM: &str = "codebook.entries";

/// `K × d` codebook rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    entries: Tensor<f32>,
}

impl Codebook {
    /// Entries drawn uniformly from `[−1/K, 1/K]`.
    pub fn new<R: Rng>(k: usize, d: usize, rng: &mut R) -> Result<Self> {
        if k < 2 || d == 0 {
            return config_err(format!("codebook needs K >= 2 and d >= 1, got K={k}, d={d}"));
        }
        Ok(Codebook {
            entries: init::uniform(&[k, d], 1.0 / k as f64, rng),
        })
    }

    pub fn from_entries(entries: Tensor<f32>) -> Result<Self> {
        if entries.rank() != 2 || entries.shape()[0] < 2 {
            return config_err(format!("codebook must be K×d with K >= 2, got {:?}", entries.shape()));
        }
        if !entries.is_finite() {
            return config_err("codebook contains non-finite entries");
        }
        Ok(Codebook { entries })
    }

    pub fn k(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entries(&self) -> &Tensor<f32> {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &[f32] {
        self.entries.row(i)
    }

    pub fn quantize(&self, z_v: &Tensor<f32>) -> Result<Quantization<f32>> {
        quantize(z_v, &self.entries)
    }

    /// Registers the entries as a trainable parameter.
    pub fn register(self, store: &mut ParamStore<f32>) -> ParamId {
        store.add(CODEBOOK_PARAM, self.entries)
    }
}

/// Result of quantizing plain tensors.
#[derive(Clone, Debug)]
pub struct Quantization<T: Scalar> {
    pub z_q: Tensor<T>,
    pub indices: Vec<usize>,
    /// `mean_t ‖z_v[t] − z_q[t]‖²`; the codebook and commitment terms share
    /// this value and differ only in where their gradients go.
    pub codebook_term: T,
    pub commitment_term: T,
}

fn check_dims<T: Scalar>(z_v: &Tensor<T>, entries: &Tensor<T>) -> Result<(usize, usize)> {
    if z_v.rank() != 2 || entries.rank() != 2 || z_v.shape()[1] != entries.shape()[1] {
        return dim_err(format!(
            "tokens {:?} do not match codebook {:?}",
            z_v.shape(),
            entries.shape()
        ));
    }
    Ok((z_v.shape()[0], entries.shape()[1]))
}

/// Index of the nearest entry for every row of `z_v`, ties going to the
/// lowest index.
pub fn nearest_indices<T: Scalar>(z_v: &Tensor<T>, entries: &Tensor<T>) -> Result<Vec<usize>> {
    let (m, _) = check_dims(z_v, entries)?;
    let k = entries.shape()[0];
    Ok((0..m)
        .map(|t| {
            let z = z_v.row(t);
            let mut best = (T::infinity(), 0);
            for j in 0..k {
                let d: T = z.iter().zip(entries.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect())
}

pub fn quantize<T: Scalar>(z_v: &Tensor<T>, entries: &Tensor<T>) -> Result<Quantization<T>> {
    let (m, d) = check_dims(z_v, entries)?;
    let indices = nearest_indices(z_v, entries)?;
    let mut data = Vec::with_capacity(m * d);
    for &i in &indices {
        data.extend_from_slice(entries.row(i));
    }
    let z_q = Tensor::new(vec![m, d], data)?;
    let sq: T = z_v.data().iter().zip(z_q.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let term = sq / T::from_f64(m.max(1) as f64);
    Ok(Quantization {
        z_q,
        indices,
        codebook_term: term,
        commitment_term: term,
    })
}

fn mean_token_sq<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let m = g.shape(a)[0].max(1);
    let diff = g.sub(a, b)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq)?;
    g.scale(total, T::from_f64(1.0 / m as f64))
}

/// `‖sg[z_v] − z_q‖² + β‖sg[z_q] − z_v‖²`, each averaged over tokens. The
/// first term reaches only `z_q`'s inputs, the second only `z_v`'s.
pub fn quantization_loss<T: Scalar>(g: &mut Graph<T>, z_v: Var, z_q: Var, beta: f64) -> Result<Var> {
    if g.shape(z_v) != g.shape(z_q) {
        return dim_err(format!("z_v {:?} vs z_q {:?}", g.shape(z_v), g.shape(z_q)));
    }
    let zv_stop = g.detach(z_v);
    let zq_stop = g.detach(z_q);
    let codebook = mean_token_sq(g, zv_stop, z_q)?;
    let commit = mean_token_sq(g, zq_stop, z_v)?;
    let commit = g.scale(commit, T::from_f64(beta))?;
    g.add(codebook, commit)
}

/// Quantized bottleneck inside a graph.
pub struct VqOutput {
    /// Forward value `z_q`; gradient flows to `z_v` unchanged.
    pub z_st: Var,
    pub z_q: Var,
    pub indices: Vec<usize>,
    pub loss: Var,
}

pub fn quantize_var<T: Scalar>(g: &mut Graph<T>, codebook: Var, z_v: Var, beta: f64) -> Result<VqOutput> {
    let indices = nearest_indices(g.value(z_v), g.value(codebook))?;
    let z_q = g.embedding(codebook, &indices)?;
    let z_st = g.straight_through(z_v, z_q)?;
    let loss = quantization_loss(g, z_v, z_q, beta)?;
    Ok(VqOutput { z_st, z_q, indices, loss })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Usage {
    pub counts: Vec<usize>,
    /// `exp` of the entropy of the empirical entry distribution.
    pub perplexity: f64,
}

impl Usage {
    pub fn active(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

pub fn codebook_usage(indices: &[usize], k: usize) -> Usage {
    let mut counts = vec![0usize; k];
    for &i in indices {
        if i < k {
            counts[i] += 1;
        }
    }
    let total = counts.iter().sum::<usize>() as f64;
    let entropy: f64 = if total == 0.0 {
        0.0
    } else {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum()
    };
    Usage {
        counts,
        perplexity: entropy.exp(),
    }
}

/// Overwrites entries that no token used with randomly chosen encoder
/// outputs from `pool` (rows of `n × d`). Returns how many were reset.
pub fn revive_dead_entries<R: Rng>(entries: &mut Tensor<f32>, usage: &Usage, pool: &Tensor<f32>, rng: &mut R) -> usize {
    let d = entries.shape()[1];
    let dead: Vec<usize> = usage.counts.iter().enumerate().filter(|(_, &c)| c == 0).map(|(i, _)| i).collect();
    let n = pool.shape()[0];
    if dead.is_empty() || n == 0 {
        return 0;
    }
    let picks: Vec<usize> = if n >= dead.len() {
        sample(rng, n, dead.len()).into_vec()
    } else {
        (0..dead.len()).map(|_| rng.random_range(0..n)).collect()
    };
    for (&e, &p) in dead.iter().zip(&picks) {
        let src = pool.row(p).to_vec();
        entries.data_mut()[e * d..(e + 1) * d].copy_from_slice(&src);
    }
    dead.len()
}
