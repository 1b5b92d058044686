use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Condition, Stage2TrainConfig, TransformerPrior};
use crate::error::{config_err, dim_err, Error, Result};
use crate::seed::derive_seed;
use crate::tensor::{cosine_lr, Adam, AdamConfig, Grads, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-token NLL over the epoch's training sequences.
    pub nll: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub epochs: Vec<Stage2EpochLog>,
    pub final_nll: Option<f64>,
}

fn diverged(model: &TransformerPrior, epoch: usize, checkpoint: Option<&Path>) -> Error {
    let saved: Option<PathBuf> = checkpoint.and_then(|p| {
        let last_good = p.with_extension("last_good.a3dc");
        model.save(&last_good).ok().map(|_| last_good)
    });
    Error::Diverged { epoch, checkpoint: saved }
}

/// Fits the prior to index sequences by minimising the mean per-token NLL.
///
/// `conds` is either empty (unconditional) or holds one condition per
/// sequence. With `condition_dropout > 0` a sample's condition is swapped for
/// the start token with that probability, so one model also covers
/// unconditional sampling. When `checkpoint` is given the parameters are
/// written there after every epoch; a non-finite loss returns
/// [`Error::Diverged`].
pub fn train_stage2(
    model: &mut TransformerPrior,
    seqs: &[Vec<usize>],
    conds: &[Condition],
    tc: &Stage2TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<Stage2Report> {
    if seqs.is_empty() {
        return config_err("stage-two training set is empty");
    }
    if tc.batch_size == 0 {
        return config_err("batch_size must be positive");
    }
    if !(0.0..=1.0).contains(&tc.condition_dropout) {
        return config_err("condition_dropout must lie in [0, 1]");
    }
    if !conds.is_empty() && conds.len() != seqs.len() {
        return dim_err(format!("{} conditions for {} sequences", conds.len(), seqs.len()));
    }
    for c in conds {
        model.check_condition(c)?;
    }
    let mut adam = Adam::new(&model.params, AdamConfig { lr: tc.lr, ..Default::default() });
    let mut report = Stage2Report::default();

    for epoch in 0..tc.epochs {
        let lr = cosine_lr(tc.lr, tc.lr_final_factor, epoch, tc.epochs);
        adam.set_lr(lr);
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, &[epoch as u64, 0])));
        let mut nll_sum = 0.0;

        for batch in order.chunks(tc.batch_size) {
            let steps: Result<Vec<(Grads<f32>, f64)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut cond = conds.get(i).cloned().unwrap_or(Condition::None);
                    if tc.condition_dropout > 0.0 {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, &[epoch as u64, i as u64, 1]));
                        if rng.random::<f64>() < tc.condition_dropout {
                            cond = Condition::None;
                        }
                    }
                    let mut g = Graph::new();
                    let loss = model.nll_loss(&mut g, &model.params, &seqs[i], &cond)?;
                    g.backward(loss)?;
                    Ok((g.param_grads(model.params.len()), g.value(loss).item() as f64))
                })
                .collect();
            let steps = match steps {
                Ok(s) => s,
                Err(Error::Numeric { op, pass }) => {
                    log::error!("stage 2: non-finite value in {op} ({pass}) at epoch {epoch}");
                    return Err(diverged(model, epoch, checkpoint));
                }
                Err(e) => return Err(e),
            };
            let mut grads = Grads::new(model.params.len());
            for (g, l) in &steps {
                grads.merge(g)?;
                nll_sum += l;
            }
            if !nll_sum.is_finite() {
                return Err(diverged(model, epoch, checkpoint));
            }
            grads.scale(1.0 / steps.len() as f32);
            adam.step(&mut model.params, &grads)?;
            if !model.params.all_finite() {
                return Err(Error::Diverged { epoch, checkpoint: None });
            }
        }

        let nll = nll_sum / seqs.len() as f64;
        log::info!("stage 2 epoch {epoch}: lr {lr:.2e} NLL {nll:.4}");
        report.epochs.push(Stage2EpochLog { epoch, lr, nll });
        report.final_nll = Some(nll);
        if let Some(p) = checkpoint {
            model.save(p)?;
        }
        if tc.target_nll.is_some_and(|t| nll < t) {
            break;
        }
    }
    if let (Some(p), true) = (checkpoint, report.epochs.is_empty()) {
        model.save(p)?;
    }
    Ok(report)
}
