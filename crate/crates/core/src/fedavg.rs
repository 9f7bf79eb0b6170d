//! Federated averaging over simulated client shards.
//!
//! Each round: sample available clients, let every selected client run plain
//! SGD from the current global weights on its own shard, average the
//! returned weights with weights `n_k / N`, and hand the server optimizer the
//! pseudo-gradient `w_t - average`. With server momentum 0 and learning rate
//! 1 the new global model is exactly the weighted average.
//!
//! The server side only ever sees [`ClientUpdate`] values; shards are read
//! inside [`client_round`] alone.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::central::epoch_order;
use crate::cifg::CifgModel;
use crate::corpus::ClientShard;
use crate::error::{Error, Result};
use crate::eval::{jackknife_ratio, recall_counts, JackknifeEstimate, MetricsRow, NextWordPredictor, Phase};
use crate::nn::{derive_seed, nesterov_step, rng_from, OptimizerState, Real};

/// Consecutive skipped rounds tolerated before giving up.
pub const MAX_CONSECUTIVE_SKIPS: u64 = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct FedConfig {
    pub clients_per_round_min: usize,
    pub clients_per_round_max: usize,
    pub client_lr: f64,
    pub client_batch_size: usize,
    pub client_epochs: usize,
    pub total_rounds: u64,
    /// Probability that a client is available in a given round.
    pub eligibility_prob: f64,
    pub server_lr: f64,
    pub server_momentum: f64,
    /// Evaluate every this many rounds; 0 only evaluates at the start and end.
    pub eval_every: u64,
    pub seed: u64,
    /// Client-side gradient clipping, as in centralized training.
    pub clip_norm: Option<f64>,
    pub record_wall_time: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            clients_per_round_min: 5,
            clients_per_round_max: 20,
            client_lr: 0.5,
            client_batch_size: 16,
            client_epochs: 1,
            total_rounds: 100,
            eligibility_prob: 1.0,
            server_lr: 1.0,
            server_momentum: 0.9,
            eval_every: 10,
            seed: 0,
            clip_norm: None,
            record_wall_time: false,
        }
    }
}

impl FedConfig {
    /// Paper-scale round sizes: 100 to 500 clients.
    pub fn paper_scale() -> Self {
        Self {
            clients_per_round_min: 100,
            clients_per_round_max: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.clients_per_round_min == 0 || self.clients_per_round_min > self.clients_per_round_max {
            return bad(format!(
                "need 1 <= clients_per_round_min <= clients_per_round_max, got {}..{}",
                self.clients_per_round_min, self.clients_per_round_max
            ));
        }
        if !(self.client_lr > 0.0 && self.client_lr.is_finite()) {
            return bad(format!("client_lr must be > 0, got {}", self.client_lr));
        }
        if self.client_batch_size == 0 || self.client_epochs == 0 {
            return bad("client_batch_size and client_epochs must be >= 1".into());
        }
        if !(self.eligibility_prob > 0.0 && self.eligibility_prob <= 1.0) {
            return bad(format!("eligibility_prob must be in (0, 1], got {}", self.eligibility_prob));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return bad(format!("server_lr must be > 0, got {}", self.server_lr));
        }
        if !(0.0..1.0).contains(&self.server_momentum) {
            return bad(format!("server_momentum must be in [0, 1), got {}", self.server_momentum));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        Ok(())
    }
}

/// Picks the clients for sampling attempt `attempt`.
///
/// Every client is available independently with `eligibility_prob`; between
/// `min` and `max` of the available ones are then drawn uniformly without
/// replacement. `None` means too few clients were available and the round
/// must be retried with the next attempt index. Selected indices into
/// `population` are returned in ascending order.
pub fn sample_clients(population: &[ClientShard], attempt: u64, config: &FedConfig) -> Result<Option<Vec<usize>>> {
    let min = config.clients_per_round_min;
    if population.len() < min {
        return Err(Error::PopulationTooSmall {
            needed: min,
            available: population.len(),
        });
    }
    let mut rng = rng_from(derive_seed(config.seed, "sample", attempt));
    let available: Vec<usize> = (0..population.len())
        .filter(|_| rng.random::<f64>() < config.eligibility_prob)
        .collect();
    if available.len() < min {
        return Ok(None);
    }
    let max = config.clients_per_round_max.min(available.len());
    let count = rng.random_range(min..=max);
    let mut chosen: Vec<usize> = available.choose_multiple(&mut rng, count).copied().collect();
    chosen.sort_unstable();
    Ok(Some(chosen))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: u32,
    /// Local weights after training, flattened in checkpoint order.
    pub weights: Vec<T>,
    /// Sentences processed per local epoch.
    pub n_k: usize,
    /// Mean minibatch loss over local training.
    pub local_loss: f64,
}

/// Local training on one client: `client_epochs` passes of plain SGD at
/// `client_lr` starting from `global`. Minibatch order is drawn from `seed`.
pub fn client_round<T: Real>(
    global: &CifgModel<T>,
    shard: &ClientShard,
    config: &FedConfig,
    seed: u64,
) -> Result<ClientUpdate<T>> {
    let sentences = shard.sentences();
    let mut model = global.clone();
    let (mut loss_sum, mut batches) = (0.0, 0usize);
    for epoch in 0..config.client_epochs {
        let order = epoch_order(sentences.len(), config.client_batch_size, seed, epoch as u64);
        for chunk in order.chunks(config.client_batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| sentences[i].clone()).collect();
            let (loss, mut grads) = model.loss_and_grads(&batch)?;
            if let Some(max_norm) = config.clip_norm {
                grads.clip_global_norm(max_norm);
            }
            model.apply_sgd(&grads, config.client_lr);
            loss_sum += loss;
            batches += 1;
        }
    }
    if !model.is_finite() {
        return Err(Error::NumericOverflow(format!(
            "client {} produced non-finite weights",
            shard.client_id
        )));
    }
    Ok(ClientUpdate {
        client_id: shard.client_id,
        weights: model.to_flat(),
        n_k: shard.n_k(),
        local_loss: loss_sum / batches as f64,
    })
}

/// `n_k / N` for each update, in input order.
pub fn aggregation_weights<T>(updates: &[ClientUpdate<T>]) -> Vec<f64> {
    let total: u64 = updates.iter().map(|u| u.n_k as u64).sum();
    updates
        .iter()
        .map(|u| u.n_k as f64 / total as f64)
        .collect()
}

/// Weighted average `sum_k (n_k / N) w_k`, summed in ascending client id
/// order so the result does not depend on arrival order.
///
/// The sum is taken relative to the lowest-id update,
/// `w_0 + sum_k (n_k / N)(w_k - w_0)`: the same convex combination, but
/// identical updates come back bit-for-bit instead of up to rounding.
pub fn aggregate<T: Real>(updates: &[ClientUpdate<T>]) -> Result<Vec<T>> {
    let first = updates.first().ok_or(Error::NoUpdates)?;
    let len = first.weights.len();
    if let Some(u) = updates.iter().find(|u| u.weights.len() != len) {
        return Err(Error::ShapeMismatch {
            expected: len,
            actual: u.weights.len(),
        });
    }
    if updates.iter().any(|u| u.n_k == 0) {
        return Err(Error::invalid("client update with n_k = 0"));
    }
    let weights = aggregation_weights(updates);
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);
    let base = &updates[order[0]].weights;
    let mut out = base.clone();
    for &i in &order[1..] {
        let w = T::from_f64(weights[i]);
        for ((o, &x), &b) in out.iter_mut().zip(&updates[i].weights).zip(base) {
            *o += w * (x - b);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState<T> {
    pub round: u64,
    pub global: CifgModel<T>,
    pub opt: OptimizerState<T>,
}

impl<T: Real> ServerState<T> {
    pub fn new(global: CifgModel<T>, server_lr: f64, momentum: f64) -> Result<Self> {
        let opt = OptimizerState::nesterov(server_lr, momentum, global.num_params())?;
        Ok(Self { round: 0, global, opt })
    }
}

/// Nesterov step on the pseudo-gradient `w_t - averaged`.
pub fn server_update<T: Real>(state: &ServerState<T>, averaged: &[T]) -> Result<ServerState<T>> {
    let w = state.global.to_flat();
    if averaged.len() != w.len() {
        return Err(Error::ShapeMismatch {
            expected: w.len(),
            actual: averaged.len(),
        });
    }
    let pseudo_grad: Vec<T> = w.iter().zip(averaged).map(|(&a, &b)| a - b).collect();
    let (next, opt) = nesterov_step(&state.opt, &pseudo_grad, &w)?;
    Ok(ServerState {
        round: state.round + 1,
        global: CifgModel::from_flat(*state.global.config(), &next)?,
        opt,
    })
}

/// Pooled recall over a client population with a leave-one-client-out
/// jackknife standard error, one estimate per cutoff in `ks`.
pub fn federated_recall<P: NextWordPredictor + Sync + ?Sized>(
    model: &P,
    shards: &[ClientShard],
    ks: &[usize],
) -> Result<Vec<JackknifeEstimate>> {
    if shards.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let per_client = shards
        .par_iter()
        .map(|s| recall_counts(model, s.sentences(), ks))
        .collect::<Result<Vec<_>>>()?;
    let positions: Vec<u64> = per_client.iter().map(|c| c.positions).collect();
    (0..ks.len())
        .map(|j| {
            let hits: Vec<u64> = per_client.iter().map(|c| c.hits[j]).collect();
            jackknife_ratio(&hits, &positions)
        })
        .collect()
}

/// Token-weighted top-`k` recall over `shards` with its jackknife stderr.
/// With a single client `defined` is false and the stderr is 0.
pub fn federated_eval<T: Real>(model: &CifgModel<T>, shards: &[ClientShard], k: usize) -> Result<JackknifeEstimate> {
    Ok(federated_recall(model, shards, &[k])?[0])
}

/// What happened in one completed round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSummary {
    pub round: u64,
    pub selected_client_ids: Vec<u32>,
    pub n_total: u64,
    pub mean_local_loss: f64,
}

impl RoundSummary {
    pub fn to_json_line(&self) -> String {
        let ids = self
            .selected_client_ids
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut s = String::new();
        let _ = write!(
            s,
            "{{\"round\":{},\"selected_client_ids\":[{}],\"n_total\":{},\"mean_local_loss\":{}}}",
            self.round, ids, self.n_total, self.mean_local_loss
        );
        s
    }
}

/// Stepwise federated training; [`run_federated`] drives it to completion.
pub struct FederatedTrainer<'a, T> {
    state: ServerState<T>,
    population: &'a [ClientShard],
    config: FedConfig,
    attempt: u64,
    examples_seen: u64,
}

impl<'a, T: Real> FederatedTrainer<'a, T> {
    pub fn new(model: CifgModel<T>, population: &'a [ClientShard], config: FedConfig) -> Result<Self> {
        config.validate()?;
        if population.len() < config.clients_per_round_min {
            return Err(Error::PopulationTooSmall {
                needed: config.clients_per_round_min,
                available: population.len(),
            });
        }
        let state = ServerState::new(model, config.server_lr, config.server_momentum)?;
        Ok(Self {
            state,
            population,
            config,
            attempt: 0,
            examples_seen: 0,
        })
    }

    pub fn state(&self) -> &ServerState<T> {
        &self.state
    }

    pub fn model(&self) -> &CifgModel<T> {
        &self.state.global
    }

    pub fn into_model(self) -> CifgModel<T> {
        self.state.global
    }

    pub fn examples_seen(&self) -> u64 {
        self.examples_seen
    }

    /// Runs sampling attempts until one closes a round, then trains,
    /// aggregates and updates the server.
    pub fn round(&mut self) -> Result<RoundSummary> {
        let mut skipped = 0;
        let selected = loop {
            let attempt = self.attempt;
            self.attempt += 1;
            if let Some(sel) = sample_clients(self.population, attempt, &self.config)? {
                break sel;
            }
            skipped += 1;
            if skipped >= MAX_CONSECUTIVE_SKIPS {
                return Err(Error::PopulationTooSmall {
                    needed: self.config.clients_per_round_min,
                    available: 0,
                });
            }
        };
        let round_seed = derive_seed(self.config.seed, "round", self.state.round);
        let global = &self.state.global;
        let config = &self.config;
        let updates = selected
            .par_iter()
            .map(|&i| {
                let shard = &self.population[i];
                client_round(global, shard, config, derive_seed(round_seed, "client", shard.client_id as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let averaged = aggregate(&updates)?;
        self.state = server_update(&self.state, &averaged)?;
        let n_total: u64 = updates.iter().map(|u| u.n_k as u64).sum();
        self.examples_seen += n_total * self.config.client_epochs as u64;
        Ok(RoundSummary {
            round: self.state.round,
            selected_client_ids: updates.iter().map(|u| u.client_id).collect(),
            n_total,
            mean_local_loss: updates.iter().map(|u| u.local_loss).sum::<f64>() / updates.len() as f64,
        })
    }
}

/// Trains for `total_rounds` completed rounds, evaluating on
/// `eval_population` at round 0, every `eval_every` rounds and at the end.
///
/// A row's `loss` is the mean local client loss over the rounds since the
/// previous row; the round-0 row reports the initial model's loss on the
/// evaluation sentences. If `round_log` is given, one JSON line per round is
/// written to it.
pub fn run_federated<T: Real>(
    model: CifgModel<T>,
    population: &[ClientShard],
    eval_population: &[ClientShard],
    config: &FedConfig,
    round_log: Option<&Path>,
) -> Result<(CifgModel<T>, Vec<MetricsRow>)> {
    let started = Instant::now();
    let mut trainer = FederatedTrainer::new(model, population, config.clone())?;
    let mut log = round_log
        .map(|p| File::create(p).map(BufWriter::new))
        .transpose()?;
    let row = |trainer: &FederatedTrainer<T>, loss: f64| -> Result<MetricsRow> {
        let est = federated_recall(trainer.model(), eval_population, &[1, 3])?;
        Ok(MetricsRow {
            phase: Phase::Federated,
            step_or_round: trainer.state().round,
            examples_seen: trainer.examples_seen(),
            loss,
            top1: est[0].value,
            top3: est[1].value,
            top1_stderr: est[0].stderr,
            wall_ms: if config.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    };
    let eval_sentences: Vec<_> = eval_population
        .iter()
        .flat_map(|s| s.sentences().iter().cloned())
        .collect();
    if eval_sentences.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut rows = vec![row(&trainer, trainer.model().mean_loss(&eval_sentences)?)?];
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    while trainer.state().round < config.total_rounds {
        let summary = trainer.round()?;
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", summary.to_json_line())?;
        }
        loss_sum += summary.mean_local_loss;
        loss_n += 1;
        let r = summary.round;
        if r == config.total_rounds || (config.eval_every > 0 && r % config.eval_every == 0) {
            rows.push(row(&trainer, loss_sum / loss_n as f64)?);
            (loss_sum, loss_n) = (0.0, 0);
        }
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    Ok((trainer.into_model(), rows))
}
