//! Training loop: seeded shuffling, chunk-parallel gradients, Adam under
//! a cyclical learning rate, best-validation retention and early stopping.

pub mod adam;
pub mod schedule;
pub mod split;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use schedule::CyclicalLr;
pub use split::{split_by_product, split_established_new, SplitResult};

use crate::error::{Error, Result};
use crate::eval::metrics::mae;
use crate::model::{Head, MuqarModel};
use crate::series::TrainingExample;
use crate::tensor::{Gradients, Graph, Mode, ParamStore};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CategoricalCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    /// Epochs per half-cycle of the learning-rate schedule.
    pub step_size: usize,
    pub gamma: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Examples per gradient graph. Fixed so results do not depend on the
    /// number of worker threads.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 100,
            base_lr: 1e-4,
            max_lr: 1e-2,
            step_size: 2,
            gamma: 0.1,
            loss: LossKind::Mse,
            seed: 0,
            patience: 10,
            chunk_size: 64,
        }
    }
}

impl TrainConfig {
    /// Small batches and a slowly decaying schedule for datasets of a few
    /// thousand examples.
    pub fn desk() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            step_size: 4,
            gamma: 0.95,
            patience: 15,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr < self.max_lr) {
            return Err(Error::invalid(format!("need 0 < base_lr < max_lr, got {} and {}", self.base_lr, self.max_lr)));
        }
        if self.step_size == 0 || self.batch_size == 0 || self.epochs == 0 || self.chunk_size == 0 {
            return Err(Error::invalid("step_size, batch_size, epochs and chunk_size must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }

    pub fn schedule(&self, iters_per_epoch: usize) -> CyclicalLr {
        CyclicalLr {
            base_lr: self.base_lr,
            max_lr: self.max_lr,
            step_size: self.step_size * iters_per_epoch,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the epoch's first iteration.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after fitting.
    pub best_epoch: usize,
    pub best_score: f64,
    pub stopped_early: bool,
}

/// Derives an independent seed from `base` and a position.
fn mix(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Loss (divided by `denom`) and gradients of one batch, computed over
/// fixed-size chunks in parallel and merged in chunk order.
pub fn batch_gradients<T: Scalar>(
    model: &MuqarModel<T>,
    examples: &[&TrainingExample],
    chunk_size: usize,
    seed: u64,
) -> Result<(f64, Gradients<T>)> {
    let denom = T::of(loss_denominator(model, examples.len()) as f64);
    let parts: Vec<Result<(f64, Gradients<T>)>> = examples
        .par_chunks(chunk_size)
        .enumerate()
        .map(|(i, chunk)| {
            let batch = model.batch(chunk)?;
            let mut g = Graph::new(&model.store, Mode::Train { seed: mix(seed, i as u64, 0) });
            let loss = model.loss(&mut g, &batch, denom)?;
            let value = g.value(loss)?.data()[0].as_f64();
            Ok((value, g.backward(loss)?))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Gradients::default();
    for part in parts {
        let (l, g) = part?;
        total += l;
        grads.merge(g);
    }
    Ok((total, grads))
}

fn loss_denominator<T: Scalar>(model: &MuqarModel<T>, batch: usize) -> usize {
    match model.config.head {
        Head::Regression => batch * model.config.k,
        Head::Classification { .. } => batch,
    }
}

/// Mean loss and, for regression, MAE of `[0, 1]`-clamped forecasts.
pub fn evaluate_loss<T: Scalar>(model: &MuqarModel<T>, examples: &[TrainingExample]) -> Result<(f64, Option<f64>)> {
    let refs: Vec<&TrainingExample> = examples.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(256) {
        let batch = model.batch(chunk)?;
        let mut g = Graph::new(&model.store, Mode::Inference);
        let denom = T::of(loss_denominator(model, refs.len()) as f64);
        let loss = model.loss(&mut g, &batch, denom)?;
        total += g.value(loss)?.data()[0].as_f64();
    }
    let err = match model.config.head {
        Head::Regression => {
            let pred = model.predict(&refs)?;
            let yhat: Vec<f64> = pred.iter().flatten().map(|v| v.as_f64().clamp(0.0, 1.0)).collect();
            let y: Vec<f64> = examples.iter().flat_map(|e| e.target.iter().copied()).collect();
            Some(mae(&y, &yhat))
        }
        Head::Classification { .. } => None,
    };
    Ok((total, err))
}

fn snapshot<T: Scalar>(store: &ParamStore<T>) -> Vec<Vec<T>> {
    store.iter().map(|(_, _, t)| t.data().to_vec()).collect()
}

fn restore<T: Scalar>(store: &mut ParamStore<T>, saved: &[Vec<T>]) {
    for (id, data) in store.ids().collect::<Vec<_>>().into_iter().zip(saved) {
        store.get_mut(id).data_mut().copy_from_slice(data);
    }
}

/// Trains `model` in place. On return the model holds the parameters of
/// the best epoch (validation MAE for regression, validation loss for
/// classification, training loss without a validation set). `on_epoch`
/// sees every record as soon as it is complete.
///
/// A non-finite loss or gradient aborts with [`Error::Numeric`]; the model
/// then holds the last finite parameters.
pub fn fit<T: Scalar>(
    model: &mut MuqarModel<T>,
    train: &[TrainingExample],
    validation: &[TrainingExample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let expected = match model.config.head {
        Head::Regression => LossKind::Mse,
        Head::Classification { .. } => LossKind::CategoricalCrossEntropy,
    };
    if config.loss != expected {
        return Err(Error::invalid(format!("loss {:?} does not fit the model head", config.loss)));
    }
    let iters_per_epoch = train.len().div_ceil(config.batch_size);
    let schedule = config.schedule(iters_per_epoch);
    let mut adam = Adam::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, snapshot(&model.store));
    let mut since_best = 0;
    let mut iteration = 0;
    let mut stopped_early = false;
    for epoch in 0..config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, 1)));
        let lr0 = schedule.lr(iteration);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &train[i]).collect();
            let seed = mix(config.seed, epoch as u64, 2 + b as u64);
            let (loss, grads) = batch_gradients(model, &batch, config.chunk_size, seed)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss became {loss} in epoch {epoch}, batch {b}")));
            }
            adam.step(&mut model.store, &grads, schedule.lr(iteration))?;
            epoch_loss += loss * batch.len() as f64;
            iteration += 1;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let (val_loss, val_mae) = if validation.is_empty() {
            (None, None)
        } else {
            let (l, m) = evaluate_loss(model, validation)?;
            (Some(l), m)
        };
        let record = EpochRecord {
            epoch,
            lr: lr0,
            train_loss,
            val_loss,
            val_mae,
        };
        on_epoch(&record);
        history.push(record);
        let score = val_mae.or(val_loss).unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(Error::Numeric(format!("selection score became {score} in epoch {epoch}")));
        }
        if score < best.0 {
            best = (score, epoch, snapshot(&model.store));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    restore(&mut model.store, &best.2);
    Ok(FitReport {
        history,
        best_epoch: best.1,
        best_score: best.0,
        stopped_early,
    })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
