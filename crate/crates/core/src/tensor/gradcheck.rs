//! Central finite-difference gradient checking.
//!
//! A [`Differentiable`] builds a scalar loss from a [`ParamStore`]; the
//! checker compares the reverse-mode gradient of every (or a sampled subset
//! of every) parameter entry against `(f(x+ε) − f(x−ε)) / 2ε`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{Graph, ParamId, ParamStore, Scalar, Var};

/// Something whose loss can be rebuilt at any precision.
pub trait Differentiable {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamStore<T>) -> Result<Var>;
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    /// Denominator floor of the relative error, so entries with near-zero
    /// gradient are judged by absolute error.
    pub floor: f64,
    /// Entries checked per parameter tensor; larger tensors are subsampled.
    pub max_per_param: usize,
    pub seed: u64,
}

impl CheckOptions {
    pub fn f64() -> Self {
        CheckOptions {
            eps: 1e-4,
            floor: 1e-3,
            max_per_param: 24,
            seed: 0,
        }
    }

    pub fn f32() -> Self {
        CheckOptions {
            eps: 1e-2,
            floor: 1e-2,
            max_per_param: 24,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

impl CheckReport {
    fn record(&mut self, name: &str, idx: usize, analytic: f64, numeric: f64, floor: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        if err > self.max_rel_err || self.worst_param.is_empty() {
            self.max_rel_err = err.max(self.max_rel_err);
            self.worst_param = name.to_string();
            self.worst_index = idx;
        }
    }
}

fn eval<T: Scalar, F: Differentiable>(f: &F, params: &ParamStore<T>) -> Result<T> {
    let mut g = Graph::new();
    let loss = f.loss(&mut g, params)?;
    Ok(g.value(loss).item())
}

fn analytic<T: Scalar, F: Differentiable>(f: &F, params: &ParamStore<T>) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let loss = f.loss(&mut g, params)?;
    g.backward(loss)?;
    let grads = g.param_grads(params.len());
    Ok(params
        .iter()
        .map(|(id, _, t)| match grads.get(id) {
            Some(gr) => gr.data().iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; t.numel()],
        })
        .collect())
}

fn chosen_entries(numel: usize, opts: &CheckOptions, salt: usize) -> Vec<usize> {
    if numel <= opts.max_per_param {
        (0..numel).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (salt as u64).wrapping_mul(0x9E37_79B9));
        let mut v = sample(&mut rng, numel, opts.max_per_param).into_vec();
        v.sort_unstable();
        v
    }
}

fn numeric_into<T: Scalar, F: Differentiable>(
    f: &F,
    params: &ParamStore<T>,
    opts: &CheckOptions,
    analytic: &[Vec<f64>],
    only: Option<&[ParamId]>,
) -> Result<CheckReport> {
    let mut work = params.clone();
    let mut report = CheckReport::default();
    let eps = T::from_f64(opts.eps);
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    for id in ids {
        let name = params.name(id).to_string();
        for idx in chosen_entries(params.get(id).numel(), opts, id.0) {
            let orig = work.get(id).data()[idx];
            work.get_mut(id).data_mut()[idx] = orig + eps;
            let up = eval(f, &work)?;
            work.get_mut(id).data_mut()[idx] = orig - eps;
            let down = eval(f, &work)?;
            work.get_mut(id).data_mut()[idx] = orig;
            let numeric = (up.as_f64() - down.as_f64()) / (2.0 * opts.eps);
            report.record(&name, idx, analytic[id.0][idx], numeric, opts.floor);
        }
    }
    Ok(report)
}

/// Analytic and numeric gradients both computed in `T`.
pub fn check_same_precision<T: Scalar, F: Differentiable>(
    f: &F,
    params: &ParamStore<f32>,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    let p: ParamStore<T> = params.cast();
    let a = analytic(f, &p)?;
    numeric_into(f, &p, opts, &a, None)
}

/// `f32` analytic gradients against an `f64` finite-difference reference,
/// isolating single-precision error from algorithmic error.
pub fn check_f32_against_f64<F: Differentiable>(
    f: &F,
    params: &ParamStore<f32>,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    let a = analytic(f, params)?;
    let p64: ParamStore<f64> = params.cast();
    numeric_into(f, &p64, opts, &a, None)
}

/// Like [`check_same_precision`] restricted to a subset of parameters.
pub fn check_params<T: Scalar, F: Differentiable>(
    f: &F,
    params: &ParamStore<f32>,
    ids: &[ParamId],
    opts: &CheckOptions,
) -> Result<CheckReport> {
    let p: ParamStore<T> = params.cast();
    let a = analytic(f, &p)?;
    numeric_into(f, &p, opts, &a, Some(ids))
}

/// Like [`check_f32_against_f64`] restricted to a subset of parameters.
pub fn check_f32_against_f64_params<F: Differentiable>(
    f: &F,
    params: &ParamStore<f32>,
    ids: &[ParamId],
    opts: &CheckOptions,
) -> Result<CheckReport> {
    let a = analytic(f, params)?;
    let p64: ParamStore<f64> = params.cast();
    numeric_into(f, &p64, opts, &a, Some(ids))
}
