//! Centralized minibatch SGD over the pooled training split.
//!
//! Training is synchronous: one gradient per minibatch, applied immediately.
//! Each epoch visits the training set in a fresh order drawn from
//! `derive_seed(seed, "epoch", epoch)`; when a single batch covers the whole
//! set the natural order is kept, so full-batch runs are order-stable.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::cifg::{CifgModel, Gradients};
use crate::corpus::{CorpusSplit, TokenSeq};
use crate::error::{Error, Result};
use crate::eval::{recall_counts, MetricsRow, Phase};
use crate::nn::{derive_seed, rng_from, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct CentralConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Evaluate every this many steps; 0 only evaluates at the start and end.
    pub eval_every: u64,
    pub seed: u64,
    /// Rescale each gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    /// Fill `wall_ms` in metric rows. Off by default so metric files are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for CentralConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 50,
            max_steps: 1000,
            eval_every: 100,
            seed: 0,
            clip_norm: None,
            record_wall_time: false,
        }
    }
}

impl CentralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Order of training examples for one epoch.
pub fn epoch_order(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if batch_size < n {
        order.shuffle(&mut rng_from(derive_seed(seed, "epoch", epoch)));
    }
    order
}

/// Stepwise trainer; [`train_centralized`] drives it to completion.
pub struct CentralTrainer<T> {
    model: CifgModel<T>,
    config: CentralConfig,
    train: Vec<TokenSeq>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    step: u64,
    examples_seen: u64,
}

impl<T: Real> CentralTrainer<T> {
    pub fn new(model: CifgModel<T>, train: Vec<TokenSeq>, config: CentralConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let order = epoch_order(train.len(), config.batch_size, config.seed, 0);
        Ok(Self {
            model,
            config,
            train,
            order,
            cursor: 0,
            epoch: 0,
            step: 0,
            examples_seen: 0,
        })
    }

    pub fn model(&self) -> &CifgModel<T> {
        &self.model
    }

    pub fn into_model(self) -> CifgModel<T> {
        self.model
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn examples_seen(&self) -> u64 {
        self.examples_seen
    }

    fn next_batch(&mut self) -> Vec<TokenSeq> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.order = epoch_order(self.train.len(), self.config.batch_size, self.config.seed, self.epoch);
        }
        let end = (self.cursor + self.config.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end]
            .iter()
            .map(|&i| self.train[i].clone())
            .collect();
        self.cursor = end;
        batch
    }

    /// One SGD step. Returns the batch loss and the gradient that was
    /// applied (after clipping), i.e. the parameters moved by exactly
    /// `-lr * grads`.
    pub fn step(&mut self) -> Result<(f64, Gradients<T>)> {
        let batch = self.next_batch();
        let (loss, mut grads) = self.model.loss_and_grads(&batch)?;
        if let Some(max_norm) = self.config.clip_norm {
            grads.clip_global_norm(max_norm);
        }
        self.model.apply_sgd(&grads, self.config.lr);
        if !self.model.is_finite() {
            return Err(Error::NumericOverflow(format!(
                "parameters diverged at step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        self.examples_seen += batch.len() as u64;
        Ok((loss, grads))
    }
}

/// Top-1 and top-3 recall of `model` on `data`.
pub(crate) fn recall_1_3<T: Real>(model: &CifgModel<T>, data: &[TokenSeq]) -> Result<(f64, f64)> {
    let counts = recall_counts(model, data, &[1, 3])?;
    Ok((counts.recall(1)?, counts.recall(3)?))
}

/// Trains on `data.train` and records metrics on `data.eval` (or on the
/// training split when the eval split is empty).
///
/// A row is written at step 0, every `eval_every` steps and after the last
/// step. Its `loss` is the mean batch loss since the previous row; the
/// step-0 row reports the initial model's loss on the evaluation data.
pub fn train_centralized<T: Real>(
    model: CifgModel<T>,
    data: &CorpusSplit<TokenSeq>,
    config: &CentralConfig,
) -> Result<(CifgModel<T>, Vec<MetricsRow>)> {
    let started = Instant::now();
    let eval_data = if data.eval.is_empty() {
        &data.train
    } else {
        &data.eval
    };
    let mut trainer = CentralTrainer::new(model, data.train.clone(), config.clone())?;
    let wall = |on: bool| if on { started.elapsed().as_millis() as u64 } else { 0 };

    let row = |trainer: &CentralTrainer<T>, loss: f64| -> Result<MetricsRow> {
        let (top1, top3) = recall_1_3(trainer.model(), eval_data)?;
        Ok(MetricsRow {
            phase: Phase::Central,
            step_or_round: trainer.steps_done(),
            examples_seen: trainer.examples_seen(),
            loss,
            top1,
            top3,
            top1_stderr: 0.0,
            wall_ms: wall(config.record_wall_time),
        })
    };

    let mut rows = vec![row(&trainer, trainer.model().mean_loss(eval_data)?)?];
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    while trainer.steps_done() < config.max_steps {
        let (loss, _) = trainer.step()?;
        loss_sum += loss;
        loss_n += 1;
        let step = trainer.steps_done();
        if step == config.max_steps || (config.eval_every > 0 && step % config.eval_every == 0) {
            rows.push(row(&trainer, loss_sum / loss_n as f64)?);
            (loss_sum, loss_n) = (0.0, 0);
        }
    }
    Ok((trainer.into_model(), rows))
}
