//! Generic mini-batch Adam loop shared by every trainable model: seeded
//! shuffles, per-epoch train/validation records, and divergence detection.

use crate::adam::{Adam, AdamConfig};
use crate::error::{contract, CoreError, Result};
use crate::param::ParamStore;
use crate::seeding;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

/// Per-epoch loss summary. Train loss is the mean of the per-batch loss
/// scalars produced by the loss builder.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Row indices 0..n shuffled and chunked; the final chunk may be short.
pub fn shuffled_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeding::substream(seed, "train-shuffle", epoch);
    idx.shuffle(&mut rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Copy the given rows into a fresh tensor, in order.
pub fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let c = t.cols();
    let mut out = Tensor::zeros(idx.len(), c);
    for (r, &i) in idx.iter().enumerate() {
        out.data_mut()[r * c..(r + 1) * c].copy_from_slice(t.row_slice(i));
    }
    out
}

/// Run mini-batch Adam on `model`. The loss builder returns the scalar
/// to minimize for one batch (already normalized however the caller wants
/// losses reported); `step` is the global batch counter for seeding any
/// Monte Carlo draws inside the objective. A non-finite loss aborts with
/// a numeric-failure diagnostic.
pub fn run_adam<M, L, S, V>(
    model: &mut M,
    x: &Tensor,
    y: &Tensor,
    val: Option<(&Tensor, &Tensor)>,
    cfg: &TrainConfig,
    seed: u64,
    mut loss: L,
    mut store_mut: S,
    mut val_loss: V,
) -> Result<Vec<EpochRecord>>
where
    L: FnMut(&M, &mut Tape, &Tensor, &Tensor, u64) -> Result<Var>,
    S: FnMut(&mut M) -> &mut ParamStore,
    V: FnMut(&M, &Tensor, &Tensor) -> Result<f64>,
{
    let n = x.rows();
    if n == 0 {
        return Err(contract("training set must be nonempty"));
    }
    if y.rows() != n {
        return Err(contract("feature and target row counts differ"));
    }
    if cfg.batch_size == 0 {
        return Err(contract("batch size must be positive"));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(contract("learning rate must be positive and finite"));
    }
    let mut opt = Adam::new(AdamConfig::default());
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut epoch_sum = 0.0;
        let batches = shuffled_batches(n, cfg.batch_size, seed, epoch as u64);
        let num_batches = batches.len();
        for idx in batches {
            let xb = gather_rows(x, &idx);
            let yb = gather_rows(y, &idx);
            let (value, grads) = {
                let mut tape = Tape::new();
                let l = loss(&*model, &mut tape, &xb, &yb, step)?;
                let value = tape.value(l).scalar_value();
                (value, tape.grad(l)?)
            };
            if !value.is_finite() {
                return Err(CoreError::NumericFailure(format!(
                    "training diverged: loss {value} at epoch {epoch}, step {step}"
                )));
            }
            opt.step(store_mut(model), &grads, cfg.lr)?;
            epoch_sum += value;
            step += 1;
        }
        let val_value = match val {
            Some((xv, yv)) => Some(val_loss(&*model, xv, yv)?),
            None => None,
        };
        records.push(EpochRecord {
            epoch,
            train_loss: epoch_sum / num_batches as f64,
            val_loss: val_value,
        });
    }
    Ok(records)
}
