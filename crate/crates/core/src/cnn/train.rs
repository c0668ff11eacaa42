//! Mini-batch training with early stopping and best-epoch checkpointing.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{Mode, Network};
use super::optim::{adam_step, AdamConfig, AdamState};
use super::spec::ArchitectureSpec;
use super::CnnError;
use crate::seed::{self, domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without an improvement of at least `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 300,
            patience: 20,
            min_delta: 1e-5,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(CnnError::InvalidConfig(
                "batch size and epochs must be positive".into(),
            ));
        }
        if self.patience >= self.max_epochs {
            return Err(CnnError::InvalidConfig(format!(
                "patience {} must be below max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.min_delta >= 0.0) || !(self.adam.lr > 0.0) {
            return Err(CnnError::InvalidConfig(
                "need min_delta >= 0 and lr > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Samples laid out back to back with one target each.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
}

impl Split<'_> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    /// Parameters from the epoch with the lowest validation loss.
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainedModel {
    pub fn best_val_loss(&self) -> f64 {
        self.history[self.best_epoch - 1].val_loss
    }
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    let sse: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
    sse / y.len() as f64
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        out.push_str(&format!(
            "{},{:e},{:e}\n",
            r.epoch, r.train_loss, r.val_loss
        ));
    }
    out
}

pub fn train(
    spec: &ArchitectureSpec,
    train_split: Split<'_>,
    val_split: Split<'_>,
    cfg: &TrainConfig,
) -> Result<TrainedModel, CnnError> {
    train_with(spec, train_split, val_split, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    spec: &ArchitectureSpec,
    train_split: Split<'_>,
    val_split: Split<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel, CnnError> {
    cfg.validate()?;
    spec.validate()?;
    if train_split.is_empty() {
        return Err(CnnError::EmptySplit("training"));
    }
    if val_split.is_empty() {
        return Err(CnnError::EmptySplit("validation"));
    }
    let width = spec.input.size();
    for (split, name) in [(&train_split, 0usize), (&val_split, 1)] {
        if split.x.len() != split.len() * width {
            return Err(CnnError::ShapeMismatch {
                layer: name,
                expected: split.len() * width,
                found: split.x.len(),
            });
        }
    }

    let mut net = Network::new(spec.clone(), seed::derive(cfg.seed, &[domain::INIT]))?;
    let mut state = AdamState::for_network(&net);
    let n = train_split.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Vec::with_capacity(cfg.batch_size * width);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);

    let mut history = Vec::new();
    let mut best_ckpt = (f64::INFINITY, net.clone(), 0usize);
    let mut best_for_patience = f64::INFINITY;
    let mut wait = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng_at(cfg.seed, &[domain::EPOCH, epoch as u64]));
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&train_split.x[i * width..(i + 1) * width]);
                batch_y.push(train_split.y[i]);
            }
            let m = chunk.len();
            let dropout_seed = seed::derive(cfg.seed, &[domain::DROPOUT, epoch as u64, b as u64]);
            let cache = net.forward(&batch_x, m, Mode::Train { dropout_seed })?;
            let pred = cache.predictions();
            let loss = mse(pred, &batch_y);
            if !loss.is_finite() {
                return Err(CnnError::Diverged {
                    epoch,
                    which: "training",
                });
            }
            weighted += loss * m as f64;
            let d_out: Vec<f64> = pred
                .iter()
                .zip(&batch_y)
                .map(|(p, t)| 2.0 * (p - t) / m as f64)
                .collect();
            let grads = net.backward(&cache, &d_out)?;
            net.commit_running_stats(&cache);
            adam_step(&mut net, &grads, &mut state, &cfg.adam);
        }
        let train_loss = weighted / n as f64;
        let val_pred = net.predict(val_split.x, val_split.len())?;
        let val_loss = mse(&val_pred, val_split.y);
        if !val_loss.is_finite() {
            return Err(CnnError::Diverged {
                epoch,
                which: "validation",
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        history.push(record);
        on_epoch(&record);

        if val_loss < best_ckpt.0 {
            best_ckpt = (val_loss, net.clone(), epoch);
        }
        if val_loss < best_for_patience - cfg.min_delta {
            best_for_patience = val_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience.max(1) && epoch < cfg.max_epochs {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainedModel {
        network: best_ckpt.1,
        history,
        best_epoch: best_ckpt.2,
        stopped_early,
    })
}
