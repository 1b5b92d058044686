use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Stage1TrainConfig, TriPlaneAutoencoder};
use crate::error::{config_err, Error, Result};
use crate::geometry::{rasterize_occupancy, sample_points, volumetric_iou, ImplicitShape, SampleMode};
use crate::quantizer::{codebook_usage, revive_dead_entries};
use crate::seed::derive_seed;
use crate::tensor::{cosine_lr, Adam, AdamConfig, Grads, Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub occupancy_loss: f64,
    pub quantization_loss: f64,
    pub perplexity: f64,
    pub active_codes: usize,
    pub val_iou: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub epochs: Vec<EpochLog>,
    pub final_val_iou: Option<f64>,
}

struct Step {
    grads: Grads<f32>,
    occupancy: f64,
    quantization: f64,
    indices: Vec<usize>,
    tokens: Tensor<f32>,
}

fn shape_step(model: &TriPlaneAutoencoder, shape: &ImplicitShape, point_seed: u64, query_seed: u64) -> Result<Step> {
    let cfg = model.config();
    let points = sample_points(shape, cfg.n_points, SampleMode::SurfaceNear, point_seed);
    let queries = sample_points(shape, cfg.n_queries, SampleMode::Mixed, query_seed);
    let labels = queries.labels.expect("sampled queries are labelled");
    let mut g = Graph::new();
    let out = model.forward(&mut g, &model.params, &points.points, &queries.points, &labels)?;
    g.backward(out.loss)?;
    Ok(Step {
        grads: g.param_grads(model.params.len()),
        occupancy: g.value(out.parts.occupancy).item() as f64,
        quantization: g.value(out.parts.quantization).item() as f64,
        indices: out.indices,
        tokens: g.value(out.tokens).clone(),
    })
}

/// Mean IoU between reconstructions and oracle grids at `resolution`.
pub fn mean_iou(model: &TriPlaneAutoencoder, shapes: &[ImplicitShape], resolution: usize, seed: u64) -> Result<f64> {
    if shapes.is_empty() {
        return Ok(f64::NAN);
    }
    let ious = shapes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let cloud = sample_points(s, model.config().n_points, SampleMode::SurfaceNear, derive_seed(seed, &[i as u64]));
            let pred = model.reconstruct_grid(&cloud.points, resolution)?;
            volumetric_iou(&pred, &rasterize_occupancy(s, resolution), 0.5)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

fn diverged(model: &TriPlaneAutoencoder, epoch: usize, checkpoint: Option<&Path>) -> Error {
    let saved: Option<PathBuf> = checkpoint.and_then(|p| {
        let last_good = p.with_extension("last_good.a3dc");
        model.save(&last_good).ok().map(|_| last_good)
    });
    Error::Diverged { epoch, checkpoint: saved }
}

/// Optimises every stage-one parameter jointly on `L_occ + L_quant`.
///
/// Each epoch draws fresh encoder points and labelled queries per shape from
/// seeds derived from `tc.seed`, so runs are reproducible and independent of
/// the worker count. When `checkpoint` is given the parameters and the latest
/// validation IoU are written there after every epoch; on a non-finite loss the last finite parameters are written next to
/// it and [`Error::Diverged`] is returned.
pub fn train_stage1(
    model: &mut TriPlaneAutoencoder,
    train: &[ImplicitShape],
    val: &[ImplicitShape],
    tc: &Stage1TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<Stage1Report> {
    if train.is_empty() {
        return config_err("stage-one training set is empty");
    }
    if tc.batch_size == 0 {
        return config_err("batch_size must be positive");
    }
    let mut adam = Adam::new(&model.params, AdamConfig { lr: tc.lr, ..Default::default() });
    let mut report = Stage1Report::default();
    let k = model.config().codebook_size;

    for epoch in 0..tc.epochs {
        let lr = cosine_lr(tc.lr, tc.lr_final_factor, epoch, tc.epochs);
        adam.set_lr(lr);

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, &[epoch as u64, 0])));
        let (mut occ_sum, mut quant_sum) = (0.0, 0.0);
        let mut all_indices = Vec::new();
        let mut pool_rows: Vec<f32> = Vec::new();

        for batch in order.chunks(tc.batch_size) {
            let steps: Result<Vec<Step>> = batch
                .par_iter()
                .map(|&i| {
                    let base = [epoch as u64, i as u64];
                    shape_step(
                        model,
                        &train[i],
                        derive_seed(tc.seed, &[base[0], base[1], 1]),
                        derive_seed(tc.seed, &[base[0], base[1], 2]),
                    )
                })
                .collect();
            let steps = match steps {
                Ok(s) => s,
                Err(Error::Numeric { op, pass }) => {
                    log::error!("stage 1: non-finite value in {op} ({pass}) at epoch {epoch}");
                    return Err(diverged(model, epoch, checkpoint));
                }
                Err(e) => return Err(e),
            };
            let mut grads = Grads::new(model.params.len());
            for s in &steps {
                grads.merge(&s.grads)?;
                occ_sum += s.occupancy;
                quant_sum += s.quantization;
                all_indices.extend_from_slice(&s.indices);
                if tc.revive_dead_entries && pool_rows.len() < 4096 * s.tokens.shape()[1] {
                    pool_rows.extend_from_slice(s.tokens.data());
                }
            }
            if !(occ_sum + quant_sum).is_finite() {
                return Err(diverged(model, epoch, checkpoint));
            }
            grads.scale(1.0 / steps.len() as f32);
            adam.step(&mut model.params, &grads)?;
            if !model.params.all_finite() {
                return Err(Error::Diverged { epoch, checkpoint: None });
            }
        }

        let usage = codebook_usage(&all_indices, k);
        if tc.revive_dead_entries && epoch + 1 < tc.epochs {
            let d = model.config().latent_dim;
            let pool = Tensor::new(vec![pool_rows.len() / d, d], pool_rows)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, &[epoch as u64, 3]));
            let cb = model.codebook_id();
            let revived = revive_dead_entries(model.params.get_mut(cb), &usage, &pool, &mut rng);
            if revived > 0 {
                log::debug!("stage 1 epoch {epoch}: reseeded {revived} unused codebook entries");
            }
        }

        let last = epoch + 1 == tc.epochs;
        let val_iou = if !val.is_empty() && (last || (tc.val_every > 0 && (epoch + 1) % tc.val_every == 0)) {
            Some(mean_iou(model, val, tc.val_resolution, derive_seed(tc.seed, &[u64::MAX]))?)
        } else {
            None
        };
        let n = train.len() as f64;
        let log_entry = EpochLog {
            epoch,
            lr,
            occupancy_loss: occ_sum / n,
            quantization_loss: quant_sum / n,
            perplexity: usage.perplexity,
            active_codes: usage.active(),
            val_iou,
        };
        log::info!(
            "stage 1 epoch {epoch}: L_occ {:.4} L_quant {:.4} perplexity {:.1} ({} codes){}",
            log_entry.occupancy_loss,
            log_entry.quantization_loss,
            log_entry.perplexity,
            log_entry.active_codes,
            val_iou.map(|v| format!(" val IoU {v:.4}")).unwrap_or_default()
        );
        report.epochs.push(log_entry);
        if let Some(v) = val_iou {
            report.final_val_iou = Some(v);
        }
        if let Some(p) = checkpoint {
            model.save_with_val_iou(p, report.final_val_iou)?;
        }
        if val_iou.is_some_and(|v| tc.target_iou.is_some_and(|t| v >= t)) {
            break;
        }
    }
    if let (Some(p), true) = (checkpoint, report.epochs.is_empty()) {
        model.save(p)?;
    }
    Ok(report)
}
