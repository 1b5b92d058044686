use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};

use super::{Grads, ParamStore, Scalar, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for every parameter.
#[derive(Clone, Debug)]
pub struct OptimState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    pub state: OptimState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            state: OptimState {
                m: zeros(),
                v: zeros(),
                step: 0,
            },
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Parameters without a gradient slot are left alone.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) -> Result<()> {
        if grads.len() != params.len() || self.state.m.len() != params.len() {
            return contract_err("optimizer state does not match the parameter store");
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let c = &self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        for (id, g) in grads.iter() {
            let p = params.get_mut(id);
            if p.shape() != g.shape() {
                return contract_err(format!("gradient shape {:?} vs parameter {:?}", g.shape(), p.shape()));
            }
            let m = self.state.m[id.0].data_mut();
            let v = self.state.v[id.0].data_mut();
            for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mh = *mv / bc1;
                let vh = *vv / bc2;
                *w = *w - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, ParamId};

    fn single(x: f32) -> (ParamStore<f32>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::new(vec![1], vec![x]).unwrap());
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut s, id) = single(3.0);
        let mut opt = Adam::new(&s, AdamConfig::default());
        let mut g = Grads::new(1);
        g.set(id, Tensor::zeros(&[1]));
        opt.step(&mut s, &g).unwrap();
        assert_eq!(s.get(id).data()[0], 3.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction m̂ = g and v̂ = g², so the step is lr·g/(|g|+eps)
        for &gv in &[0.5f32, -2.0, 40.0] {
            let (mut s, id) = single(1.0);
            let mut opt = Adam::new(&s, AdamConfig::default());
            let mut g = Grads::new(1);
            g.set(id, Tensor::new(vec![1], vec![gv]).unwrap());
            opt.step(&mut s, &g).unwrap();
            let moved = 1.0 - s.get(id).data()[0];
            let want = 1e-3 * gv / (gv.abs() + 1e-8);
            assert!((moved - want).abs() < 1e-7, "{moved} vs {want}");
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let (mut s, id) = single(5.0);
        let mut opt = Adam::new(&s, AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..200 {
            let mut g = Graph::new();
            let x = g.param(&s, id);
            let sq = g.mul(x, x).unwrap();
            let loss = g.sum(sq).unwrap();
            g.backward(loss).unwrap();
            opt.step(&mut s, &g.param_grads(1)).unwrap();
        }
        assert!(s.get(id).data()[0].abs() < 0.1, "x = {}", s.get(id).data()[0]);
        assert_eq!(opt.state.step, 200);
    }
}

/// Cosine decay from `base` at epoch 0 to `base · final_factor` at the last
/// epoch.
pub fn cosine_lr(base: f64, final_factor: f64, epoch: usize, epochs: usize) -> f64 {
    let progress = if epochs > 1 { epoch as f64 / (epochs - 1) as f64 } else { 0.0 };
    base * (final_factor + (1.0 - final_factor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
