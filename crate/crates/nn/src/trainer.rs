//! Epoch loop shared by both generators: AdamW, learning-rate halving on
//! validation plateaus, early stopping, best-checkpoint persistence and a
//! loss-curve CSV.

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};
use symdiff_core::dataset::{Batch, DatasetSplit};
use symdiff_core::rng::{PortableRng, RNG_NAME};
use symdiff_core::Vocabulary;

use crate::argen::ar_loss;
use crate::backbone::{Mode, SymbolicModel};
use crate::checkpoint::{save_checkpoint, TrainingMetadata};
use crate::d3pm::{d3pm_loss_from_logits, DiffusionConfig, TransitionModel};
use crate::error::{NnError, Result};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const CURVE_FILE: &str = "curve.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            batch_size: 64,
            max_epochs: 500,
            plateau_patience: 5,
            plateau_factor: 0.5,
            early_stop_patience: 15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size >= 1
            && self.max_epochs >= 1
            && self.plateau_patience >= 1
            && self.plateau_factor > 0.0
            && self.plateau_factor < 1.0
            && self.early_stop_patience >= 1;
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidConfig(format!("training config out of range: {self:?}")))
        }
    }
}

/// What one validation result did to the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauStep {
    pub improved: bool,
    pub reduced: bool,
    pub stop: bool,
}

/// Reduce-on-plateau and early-stopping counters. An epoch improves when
/// its validation loss is strictly below the best so far. Every
/// `patience` non-improving epochs since the last improvement or reduction
/// scale the rate by `factor`; `stop_patience` non-improving epochs in a
/// row end training.
#[derive(Debug, Clone)]
pub struct Plateau {
    pub lr: f64,
    factor: f64,
    patience: usize,
    stop_patience: usize,
    pub best: f64,
    pub bad_epochs: usize,
    since_reduce: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, stop_patience: usize) -> Self {
        Self { lr, factor, patience, stop_patience, best: f64::INFINITY, bad_epochs: 0, since_reduce: 0 }
    }

    pub fn observe(&mut self, val_loss: f64) -> PlateauStep {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
            self.since_reduce = 0;
            return PlateauStep { improved: true, reduced: false, stop: false };
        }
        self.bad_epochs += 1;
        self.since_reduce += 1;
        let reduced = self.since_reduce >= self.patience;
        if reduced {
            self.lr *= self.factor;
            self.since_reduce = 0;
        }
        PlateauStep { improved: false, reduced, stop: self.bad_epochs >= self.stop_patience }
    }
}

/// Training objective for a model's mode.
pub enum Objective {
    Diffusion { tm: TransitionModel, config: DiffusionConfig },
    Autoregressive,
}

impl Objective {
    pub fn for_model(model: &SymbolicModel, diffusion: &DiffusionConfig) -> Result<Self> {
        match model.config().mode {
            Mode::Diffusion => Ok(Objective::Diffusion { tm: diffusion.transition_model(model.config().vocab_size)?, config: *diffusion }),
            Mode::Autoregressive => Ok(Objective::Autoregressive),
        }
    }

    /// Loss on one batch. `train` enables dropout and batch statistics;
    /// `rng` also draws diffusion timesteps and noise.
    pub fn batch_loss(&self, model: &SymbolicModel, batch: &Batch, rng: &mut PortableRng, train: bool) -> Result<Tensor> {
        let b = batch.indices.len();
        let points = model.points_tensor(&batch.points, b, batch.n_points)?;
        match self {
            Objective::Diffusion { tm, config } => {
                let t: Vec<usize> = (0..b).map(|_| 1 + rng.below(tm.timesteps() as u64) as usize).collect();
                let xt = tm.sample_xt(&batch.tokens, &t, rng)?;
                let logits = model.forward(&xt, b, &points, Some(&t), train.then_some(&mut *rng))?;
                Ok(d3pm_loss_from_logits(&logits, &batch.tokens, &xt, &t, tm, config.lambda)?.total)
            }
            Objective::Autoregressive => ar_loss(model, &batch.tokens, b, &points, train.then_some(rng)),
        }
    }

    fn diffusion_config(&self) -> Option<&DiffusionConfig> {
        match self {
            Objective::Diffusion { config, .. } => Some(config),
            Objective::Autoregressive => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub checkpoint: PathBuf,
}

/// Stream ids: validation batch `i` uses `i`, training batch `i` of epoch
/// `e` uses `(e + 1) << 32 | i`.
fn train_stream(epoch: usize, batch: usize) -> u64 {
    ((epoch as u64 + 1) << 32) | batch as u64
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Mean loss over a split in eval mode. Diffusion noise is drawn from fixed
/// streams, so the value is comparable across epochs.
pub fn evaluate_loss(model: &SymbolicModel, objective: &Objective, split: &DatasetSplit, batch_size: usize, seed: u64) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for (i, batch) in split.batches(batch_size, None, 0).enumerate() {
        let mut rng = PortableRng::new(seed, i as u64);
        let loss = scalar(&objective.batch_loss(model, &batch, &mut rng, false)?)?;
        total += loss * batch.indices.len() as f64;
        count += batch.indices.len();
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

/// Trains `model` in place. Writes `best.ckpt` whenever validation improves
/// and appends one row per epoch to `curve.csv`, both under `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &SymbolicModel,
    objective: &Objective,
    train_split: &DatasetSplit,
    val_split: &DatasetSplit,
    vocab: &Vocabulary,
    config: &TrainConfig,
    seed: u64,
    out_dir: &Path,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_split.is_empty() || val_split.is_empty() {
        return Err(NnError::InvalidConfig("training and validation splits must be non-empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| NnError::io(out_dir, e))?;
    let curve_path = out_dir.join(CURVE_FILE);
    let mut curve = csv::Writer::from_path(&curve_path).map_err(|e| NnError::io(&curve_path, e.into()))?;
    let checkpoint = out_dir.join(BEST_CHECKPOINT);

    let params = ParamsAdamW { lr: config.learning_rate, weight_decay: config.weight_decay, ..Default::default() };
    let mut opt = AdamW::new(model.store().trainable_vars(), params)?;
    let mut plateau = Plateau::new(config.learning_rate, config.plateau_factor, config.plateau_patience, config.early_stop_patience);
    let mut epochs = Vec::new();
    let mut best_epoch = 0;
    let mut steps = 0u64;
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        let lr = plateau.lr;
        opt.set_learning_rate(lr);
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, batch) in train_split.batches(config.batch_size, Some(seed), epoch as u64).enumerate() {
            let mut rng = PortableRng::new(seed, train_stream(epoch, i));
            let loss = objective.batch_loss(model, &batch, &mut rng, true)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch: epoch + 1, batch: i });
            }
            opt.backward_step(&loss)?;
            steps += 1;
            sum += value * batch.indices.len() as f64;
            count += batch.indices.len();
        }
        let train_loss = sum / count as f64;
        let val_loss = evaluate_loss(model, objective, val_split, config.batch_size, seed)?;
        if !val_loss.is_finite() {
            return Err(NnError::NonFiniteLoss { epoch: epoch + 1, batch: usize::MAX });
        }
        let record = EpochRecord { epoch: epoch + 1, train_loss, val_loss, lr };
        curve.serialize(&record).map_err(|e| NnError::io(&curve_path, e.into()))?;
        curve.flush().map_err(|e| NnError::io(&curve_path, e))?;
        on_epoch(&record);
        epochs.push(record);
        let step = plateau.observe(val_loss);
        if step.improved {
            best_epoch = epoch + 1;
            let meta = TrainingMetadata { epoch: epoch + 1, best_val_loss: val_loss, seed, optimizer_steps: steps, rng: RNG_NAME.to_string() };
            save_checkpoint(&checkpoint, model, objective.diffusion_config(), vocab, &meta)?;
        }
        if step.stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { epochs, best_epoch, best_val_loss: plateau.best, stopped_early, checkpoint })
}
