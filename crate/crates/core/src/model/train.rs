//! Training loop with early stopping on validation loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::infer::{reconstruct_and_forecast_batch, InferenceMode};
use super::network::{EtdModel, LossParts, TrainBatch};
use crate::dataio::WindowPair;
use crate::detect::{forecasting_error, reconstruction_error};
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::seed;

const VAL_LOSS_STREAM: u64 = 0x7661_6c5f_6c6f_7373;
const VAL_DELTA_STREAM: u64 = 0x7661_6c5f_6465_6c74;
const EPOCH_STREAM: u64 = 0x6570_6f63_6800_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the horizon term in the joint loss.
    pub gamma: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement of `min_delta` before stopping.
    pub convergence_patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Compute validation `delta_R` / `delta_F` every this many epochs (0 = never).
    pub val_delta_every: usize,
    pub val_delta_windows: usize,
    pub val_delta_mode: InferenceMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            gamma: 1.0,
            max_epochs: 100,
            convergence_patience: 10,
            min_delta: 1e-4,
            seed: 0,
            adam: AdamConfig::default(),
            val_delta_every: 10,
            val_delta_windows: 16,
            val_delta_mode: InferenceMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.gamma >= 0.0
            && self.max_epochs > 0
            && self.convergence_patience > 0
            && self.min_delta >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config: {self:?}")))
        }
    }
}

/// One optimization step on a batch of windows: draws steps and noise from
/// `rng`, returns the pre-update loss and applies one Adam update.
pub fn train_step<R: Rng>(
    model: &mut EtdModel,
    opt: &mut Adam,
    windows: &[&WindowPair],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossParts> {
    let batch = TrainBatch::draw(windows, sched, rng)?;
    let (parts, grads) = model.loss_and_grad(&batch, sched, cfg.gamma)?;
    if !parts.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: opt.steps_taken() as usize,
            detail: format!(
                "loss {} (context {}, horizon {}), batch of {}",
                parts.total,
                parts.context,
                parts.horizon,
                windows.len()
            ),
        });
    }
    opt.step(model.params_mut(), &grads, cfg.learning_rate);
    Ok(parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_delta_r: Option<f64>,
    pub val_delta_f: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    /// Always `false`: training runs on one thread.
    pub parallel: bool,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss", "val_delta_r", "val_delta_f", "parallel"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                opt(r.val_delta_r),
                opt(r.val_delta_f),
                self.parallel.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: EtdModel,
    pub trace: TrainTrace,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Owns the model and optimizer state during training.
pub struct Trainer<'a> {
    pub model: EtdModel,
    opt: Adam,
    cfg: TrainConfig,
    sched: &'a DiffusionSchedule,
}

impl<'a> Trainer<'a> {
    pub fn new(model: EtdModel, cfg: TrainConfig, sched: &'a DiffusionSchedule) -> Result<Self> {
        cfg.validate()?;
        let opt = Adam::new(model.n_params(), cfg.adam);
        Ok(Self { model, opt, cfg, sched })
    }

    /// One pass over `train` in a seeded shuffled order; returns the mean
    /// pre-update loss.
    pub fn epoch(&mut self, train: &[WindowPair], epoch: usize) -> Result<f64> {
        let mut rng = seed::stream_rng(seed::derive(self.cfg.seed, EPOCH_STREAM), epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (step, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&WindowPair> = chunk.iter().map(|&i| &train[i]).collect();
            let parts = train_step(&mut self.model, &mut self.opt, &batch, self.sched, &self.cfg, &mut rng).map_err(|e| match e {
                Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { epoch, step, detail },
                other => other,
            })?;
            sum += parts.total * chunk.len() as f64;
        }
        Ok(sum / train.len() as f64)
    }
}

/// Loss on a fixed draw of steps and noise, so values are comparable across epochs.
pub fn validation_loss(
    model: &EtdModel,
    windows: &[WindowPair],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let base = seed::derive(cfg.seed, VAL_LOSS_STREAM);
    let mut sum = 0.0;
    for (c, chunk) in windows.chunks(cfg.batch_size).enumerate() {
        let refs: Vec<&WindowPair> = chunk.iter().collect();
        let batch = TrainBatch::draw_streams(&refs, sched, seed::derive(base, c as u64))?;
        sum += model.loss(&batch, sched, cfg.gamma)?.total * chunk.len() as f64;
    }
    Ok(sum / windows.len() as f64)
}

/// Mean `delta_R` and `delta_F` over the first `cfg.val_delta_windows` windows.
pub fn validation_deltas(
    model: &EtdModel,
    windows: &[WindowPair],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let take = &windows[..windows.len().min(cfg.val_delta_windows.max(1))];
    if take.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let base = seed::derive(cfg.seed, VAL_DELTA_STREAM);
    let refs: Vec<&WindowPair> = take.iter().collect();
    let seeds: Vec<u64> = take.iter().map(|w| seed::derive(base, w.origin_index as u64)).collect();
    let outs = reconstruct_and_forecast_batch(model, sched, &refs, cfg.val_delta_mode, &seeds)?;
    let (mut dr, mut df) = (0.0, 0.0);
    for (w, o) in take.iter().zip(&outs) {
        dr += reconstruction_error(w.context.view(), o.context.view())?;
        df += forecasting_error(w.horizon.view(), o.horizon.view())?;
    }
    Ok((dr / take.len() as f64, df / take.len() as f64))
}

/// Trains until the validation loss stops improving by `min_delta` for
/// `convergence_patience` epochs, or `max_epochs` is reached.
///
/// `progress` is called after every epoch.
pub fn fit(
    model: EtdModel,
    train: &[WindowPair],
    val: &[WindowPair],
    cfg: &TrainConfig,
    sched: &DiffusionSchedule,
    mut progress: impl FnMut(&TraceRow),
) -> Result<FitOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training windows"));
    }
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let mut trainer = Trainer::new(model, cfg.clone(), sched)?;
    let mut trace = TrainTrace::default();
    let mut best = (trainer.model.params().to_vec(), f64::INFINITY, 0usize);
    let mut wait = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = trainer.epoch(train, epoch)?;
        let val_loss = validation_loss(&trainer.model, val, sched, cfg)?;
        let deltas = if cfg.val_delta_every > 0 && (epoch % cfg.val_delta_every == 0 || epoch == cfg.max_epochs) {
            Some(validation_deltas(&trainer.model, val, sched, cfg)?)
        } else {
            None
        };
        let row = TraceRow {
            epoch,
            train_loss,
            val_loss,
            val_delta_r: deltas.map(|d| d.0),
            val_delta_f: deltas.map(|d| d.1),
        };
        progress(&row);
        trace.rows.push(row);
        if val_loss < best.1 - cfg.min_delta {
            best = (trainer.model.params().to_vec(), val_loss, epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.convergence_patience {
                stopped_early = true;
                break;
            }
        }
    }
    let mut model = trainer.model;
    model.params_mut().copy_from_slice(&best.0);
    Ok(FitOutcome {
        model,
        trace,
        best_epoch: best.2,
        best_val_loss: best.1,
        stopped_early,
    })
}
