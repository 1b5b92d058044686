//! Finite-difference check of a small occupancy MLP, in f64 and in f32
//! against an f64 reference.

use argus3d::tensor::gradcheck::{check_f32_against_f64, check_same_precision, CheckOptions, Differentiable};
use argus3d::tensor::{init, Graph, ParamStore, Scalar, Tensor, Var};
use argus3d::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Mlp {
    points: Vec<[f64; 3]>,
    labels: Vec<f64>,
}

impl Differentiable for Mlp {
    fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>) -> Result<Var> {
        let flat: Vec<f64> = self.points.iter().flatten().copied().collect();
        let x = g.constant(Tensor::from_f64(&[self.points.len(), 3], &flat)?);
        let w1 = g.param(p, p.id("w1").unwrap());
        let b1 = g.param(p, p.id("b1").unwrap());
        let w2 = g.param(p, p.id("w2").unwrap());
        let h = g.matmul(x, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.relu(h)?;
        let logits = g.matmul(h, w2)?;
        let targets: Vec<T> = self.labels.iter().map(|&y| T::from_f64(y)).collect();
        g.bce_with_logits(logits, &targets)
    }
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let points: Vec<[f64; 3]> = (0..32).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let labels = points
        .iter()
        .map(|p| if (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.5).powi(2) < 0.09 { 1.0 } else { 0.0 })
        .collect();
    let mut params = ParamStore::<f32>::new();
    params.add("w1", init::kaiming(&[3, 16], 3, &mut rng));
    params.add("b1", init::uniform(&[16], 0.2, &mut rng));
    params.add("w2", init::kaiming(&[16, 1], 16, &mut rng));
    let f = Mlp { points, labels };

    let r64 = check_same_precision::<f64, _>(&f, &params, &CheckOptions { eps: 1e-6, ..CheckOptions::f64() })?;
    println!("f64 analytic vs f64 FD: max rel err {:.2e} over {} entries", r64.max_rel_err, r64.checked);
    let r32 = check_f32_against_f64(&f, &params, &CheckOptions { eps: 1e-6, ..CheckOptions::f64() })?;
    println!("f32 analytic vs f64 FD: max rel err {:.2e} (worst {}[{}])", r32.max_rel_err, r32.worst_param, r32.worst_index);
    Ok(())
}
