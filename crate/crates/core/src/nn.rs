//! Parameterised layers shared by both stages.
//!
//! Layers only hold [`ParamId`]s; the values live in a [`ParamStore`], so a
//! model can run at any precision by casting its store.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{init, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// `x · W + b` on row vectors, `W` stored `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// He-uniform weights and zero bias.
    pub fn new<R: Rng>(store: &mut ParamStore<f32>, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), init::kaiming(&[in_dim, out_dim], in_dim, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[out_dim])));
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Square-kernel 2D convolution over `c × h × w` inputs.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore<f32>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * k * k;
        let w = store.add(format!("{name}.w"), init::kaiming(&[c_out, c_in, k, k], fan_in, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Conv { w, b, stride, pad }
    }

    /// 3×3, padding 1.
    pub fn same<R: Rng>(store: &mut ParamStore<f32>, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self::new(store, name, c_in, c_out, 3, 1, 1, rng)
    }

    /// 3×3, stride 2, padding 1: halves the spatial size.
    pub fn down<R: Rng>(store: &mut ParamStore<f32>, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self::new(store, name, c_in, c_out, 3, 2, 1, rng)
    }

    /// 1×1 projection.
    pub fn pointwise<R: Rng>(store: &mut ParamStore<f32>, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self::new(store, name, c_in, c_out, 1, 1, 0, rng)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn forward_relu<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.forward(g, store, x)?;
        g.relu(y)
    }
}

/// Layer normalisation over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore<f32>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Stack of [`Linear`] layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore<f32>, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i + 1 < self.layers.len() {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }
}
