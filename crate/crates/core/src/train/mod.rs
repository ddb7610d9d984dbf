//! Loss, regularization and the epoch loop.

mod optim;
mod schedule;

pub use optim::AdamW;
pub use schedule::{EarlyStopping, PlateauScheduler, IMPROVEMENT_EPS};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Profile;
use crate::embedding::{encode_profile, FieldTokens, Grid};
use crate::model::{Inputs, Model, ModelError, Param};
use crate::tensor::{Graph, TensorError};
use crate::tokenizer::Tokenizer;

pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {field} {msg}")]
    Config { field: &'static str, msg: String },
    #[error("class weights need both classes, got {negatives} negatives and {positives} positives")]
    SingleClass { negatives: usize, positives: usize },
    #[error("length mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub scheduler_patience: usize,
    pub scheduler_factor: f64,
    pub min_lr: f64,
    pub early_stop_patience: usize,
    pub clip_max_norm: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            scheduler_patience: 3,
            scheduler_factor: 0.1,
            min_lr: 1e-7,
            early_stop_patience: 10,
            clip_max_norm: 1.0,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |field, msg: &str| {
            Err(TrainError::Config {
                field,
                msg: msg.to_string(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate", "must be positive");
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be at least 1");
        }
        if self.max_epochs == 0 {
            return err("max_epochs", "must be at least 1");
        }
        if self.scheduler_patience == 0 {
            return err("scheduler_patience", "must be at least 1");
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return err("scheduler_factor", "must lie in (0, 1)");
        }
        if !(self.min_lr > 0.0) {
            return err("min_lr", "must be positive");
        }
        if self.early_stop_patience == 0 {
            return err("early_stop_patience", "must be at least 1");
        }
        if !(self.clip_max_norm > 0.0) {
            return err("clip_max_norm", "must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err("weight_decay", "must be non-negative");
        }
        Ok(())
    }
}

/// `w_y = N / (2 N_y)` for `y` in `{0, 1}`.
pub fn class_weights(labels: &[bool]) -> Result<(f64, f64)> {
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrainError::SingleClass { negatives, positives });
    }
    let n = labels.len() as f64;
    Ok((n / (2.0 * negatives as f64), n / (2.0 * positives as f64)))
}

/// Summed weighted binary cross-entropy with log inputs clamped at `1e-12`.
pub fn weighted_bce(preds: &[f64], labels: &[bool], weights: (f64, f64)) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} predictions, {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if y {
                -weights.1 * p.max(BCE_EPS).ln()
            } else {
                -weights.0 * (1.0 - p).max(BCE_EPS).ln()
            }
        })
        .sum())
}

/// `λ Σ ‖θ‖²` over the parameters marked for decay.
pub fn l2_penalty(params: &[Param], lambda: f64) -> f64 {
    lambda * params.iter().filter(|p| p.decay).map(|p| p.value.norm_sq()).sum::<f64>()
}

/// Rescales all gradients together when their global L2 norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
    }
    norm
}

/// Thresholds probabilities at 0.5.
pub fn decisions(probs: &[f64]) -> Vec<bool> {
    probs.iter().map(|&p| p >= 0.5).collect()
}

pub fn accuracy(preds: &[bool], labels: &[bool]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Profiles laid out on the model grid, with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSet {
    pub inputs: Vec<[FieldTokens; 4]>,
    pub labels: Vec<bool>,
}

impl EncodedSet {
    pub fn encode(profiles: &[Profile], tokenizer: &Tokenizer, grid: Grid) -> Self {
        Self {
            inputs: profiles.iter().map(|p| encode_profile(p, tokenizer, grid)).collect(),
            labels: profiles.iter().map(Profile::label).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Probabilities for a whole set, evaluated `batch_size` profiles at a time.
pub fn predict_set(model: &Model, set: &EncodedSet, batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.inputs.chunks(batch_size.max(1)) {
        out.extend(model.predict(Inputs::Tokens(chunk))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in history {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_history(path: impl AsRef<Path>) -> std::io::Result<Vec<EpochRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::from))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation accuracy; the
    /// first such epoch wins and epoch 0 is the untrained model.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub initial_val_acc: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

fn validate_set(set: &EncodedSet, model: &Model) -> Result<()> {
    if set.inputs.len() != set.labels.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} inputs, {} labels",
            set.inputs.len(),
            set.labels.len()
        )));
    }
    let vocab = model.config().vocab_size;
    for fields in &set.inputs {
        for f in fields {
            if let Some(id) = f.ids.iter().flatten().find(|&&id| id as usize >= vocab) {
                return Err(TrainError::ShapeMismatch(format!("token id {id} outside a vocabulary of {vocab}")));
            }
        }
    }
    Ok(())
}

fn evaluate(model: &Model, set: &EncodedSet, weights: (f64, f64), batch_size: usize) -> Result<(f64, f64)> {
    let probs = predict_set(model, set, batch_size)?;
    let loss = weighted_bce(&probs, &set.labels, weights)? / set.len() as f64;
    Ok((loss, accuracy(&decisions(&probs), &set.labels)))
}

/// One batch: forward with dropout, mean weighted BCE, backward, clip, step.
fn train_batch(
    model: &mut Model,
    batch: &[usize],
    set: &EncodedSet,
    weights: (f64, f64),
    cfg: &TrainConfig,
    lr: f64,
    opt: &mut AdamW,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64> {
    let inputs: Vec<[FieldTokens; 4]> = batch.iter().map(|&i| set.inputs[i].clone()).collect();
    let targets: Vec<f64> = batch.iter().map(|&i| set.labels[i] as u8 as f64).collect();
    let scale = 1.0 / batch.len() as f64;
    let w: Vec<f64> = batch
        .iter()
        .map(|&i| scale * if set.labels[i] { weights.1 } else { weights.0 })
        .collect();
    let mut g = Graph::new();
    let out = model.forward(&mut g, Inputs::Tokens(&inputs), Some(rng))?;
    let loss = g.weighted_bce(out.probs, targets, w, BCE_EPS)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(TrainError::NonFinite { what: "loss", epoch });
    }
    let mut grads = g.backward(loss)?;
    let mut flat: Vec<Vec<f64>> = out
        .params
        .iter()
        .map(|&v| grads.take(v).expect("every parameter receives a gradient"))
        .collect();
    clip_gradients(&mut flat, cfg.clip_max_norm);
    opt.update(model.params_mut(), &flat, lr, cfg.weight_decay)?;
    Ok(value)
}

/// Runs the full protocol: per-epoch seeded shuffle, mini-batch AdamW with
/// gradient clipping, validation accuracy driving both the plateau scheduler
/// and early stopping, and best-epoch selection.
pub fn train(model: Model, train_set: &EncodedSet, val_set: &EncodedSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    validate_set(train_set, &model)?;
    validate_set(val_set, &model)?;
    let weights = class_weights(&train_set.labels)?;

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model.params());
    let (_, initial_val_acc) = evaluate(&model, val_set, weights, cfg.batch_size)?;
    let mut scheduler = PlateauScheduler::new(
        cfg.learning_rate,
        cfg.scheduler_factor,
        cfg.scheduler_patience,
        cfg.min_lr,
        initial_val_acc,
    );
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience, initial_val_acc);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val_acc = initial_val_acc;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = scheduler.lr;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let loss = train_batch(&mut model, batch, train_set, weights, cfg, lr, &mut opt, &mut rng, epoch)?;
            loss_sum += loss * batch.len() as f64;
        }
        if model.params().iter().any(|p| !p.value.is_finite()) {
            return Err(TrainError::NonFinite {
                what: "parameters",
                epoch,
            });
        }
        let train_loss = loss_sum / train_set.len() as f64 + l2_penalty(model.params(), cfg.weight_decay);
        let (val_loss, val_acc) = evaluate(&model, val_set, weights, cfg.batch_size)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            lr,
        });
        if val_acc > best_val_acc + IMPROVEMENT_EPS {
            best_val_acc = val_acc;
            best_epoch = epoch;
            best = model.clone();
        }
        scheduler.step(val_acc);
        if stopper.step(val_acc) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_acc,
        initial_val_acc,
        history,
        stopped_early,
    })
}
