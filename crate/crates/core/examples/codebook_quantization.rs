//! Nearest-entry quantisation, the β-weighted loss, and the
//! straight-through gradient.

use argus3d::quantizer::{codebook_usage, quantize_var, Codebook};
use argus3d::tensor::{init, Graph, Tensor};
use argus3d::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cb = Codebook::new(8, 4, &mut rng)?;

    // a codebook row maps to itself with zero loss
    let z = Tensor::new(vec![1, 4], cb.entry(3).to_vec())?;
    let q = cb.quantize(&z)?;
    println!("row 3 -> index {:?}, codebook term {}, commitment term {}", q.indices, q.codebook_term, q.commitment_term);

    // ‖z_v − z_q‖² = 1 with β = 0.4 gives 1 + 0.4 · 1
    let mut g = Graph::<f64>::new();
    let zv = g.leaf(Tensor::from_f64(&[1, 2], &[1.0, 0.0])?);
    let book = g.leaf(Tensor::from_f64(&[2, 2], &[0.0, 0.0, 5.0, 5.0])?);
    let out = quantize_var(&mut g, book, zv, 0.4)?;
    println!("hand example: index {:?}, loss {}", out.indices, g.value(out.loss).item());

    // the straight-through output forwards z_q but passes gradients to z_v
    let s = g.sum(out.z_st)?;
    g.backward(s)?;
    println!("d sum(z_st) / d z_v = {:?}", g.grad(zv).unwrap().data());

    let batch = init::uniform::<f32, _>(&[256, 4], 1.0, &mut rng);
    let usage = codebook_usage(&cb.quantize(&batch)?.indices, cb.k());
    println!("random batch: {} of {} entries used, perplexity {:.2}", usage.active(), cb.k(), usage.perplexity);
    Ok(())
}
