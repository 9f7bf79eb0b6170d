//! Flat `key = value` run configuration shared by every CLI command.
//!
//! Blank lines and `#` comments are ignored; unknown keys are an error.
//! Values given on the command line override the file, which overrides the
//! defaults below.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::central::CentralConfig;
use crate::cifg::CifgConfig;
use crate::error::{Error, Result};
use crate::fedavg::FedConfig;

/// Every key with its meaning; defaults are whatever [`RunConfig::default`]
/// holds and are printed by [`RunConfig::to_text`].
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "global seed; every component derives its own sub-seed"),
    ("vocab_size", "model vocabulary size including <s>, </s>, <unk>"),
    ("embed_dim", "embedding / projection width D"),
    ("hidden", "CIFG cell width H"),
    ("source_order", "order of the synthetic source (2 or 3)"),
    ("source_vocab", "number of distinct words in the synthetic source"),
    ("sentences", "sentences generated by `gen`"),
    ("split_train", "fraction of the corpus used for training"),
    ("split_test", "fraction held out as test"),
    ("split_eval", "fraction used for evaluation"),
    ("lr", "centralized learning rate"),
    ("batch_size", "centralized minibatch size"),
    ("max_steps", "centralized training steps"),
    ("eval_every", "evaluate every N steps / rounds (0: start and end only)"),
    ("clip_norm", "gradient clipping norm, 0 disables"),
    ("clients", "number of training clients"),
    ("eval_clients", "number of evaluation clients"),
    ("clients_per_round_min", "fewest client updates that close a round"),
    ("clients_per_round_max", "most client updates per round"),
    ("client_lr", "client SGD learning rate"),
    ("client_batch_size", "client minibatch size"),
    ("client_epochs", "local passes over the shard per round"),
    ("rounds", "federated rounds"),
    ("eligibility_prob", "per-round client availability probability"),
    ("server_lr", "server optimizer learning rate"),
    ("server_momentum", "server Nesterov momentum"),
    ("ngram_order", "order of the n-gram baseline"),
    ("ngram_discount", "absolute discount of the n-gram baseline"),
    ("corpus", "corpus path"),
    ("vocab", "vocabulary path"),
    ("checkpoint", "model checkpoint path"),
    ("metrics_out", "metrics CSV path"),
    ("round_log", "federated round log path (JSON lines), empty disables"),
    ("record_wall_time", "fill wall_ms in metrics (breaks byte-identical reruns)"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub source_order: usize,
    pub source_vocab: usize,
    pub sentences: usize,
    pub split_train: f64,
    pub split_test: f64,
    pub split_eval: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub clip_norm: f64,
    pub clients: usize,
    pub eval_clients: usize,
    pub clients_per_round_min: usize,
    pub clients_per_round_max: usize,
    pub client_lr: f64,
    pub client_batch_size: usize,
    pub client_epochs: usize,
    pub rounds: u64,
    pub eligibility_prob: f64,
    pub server_lr: f64,
    pub server_momentum: f64,
    pub ngram_order: usize,
    pub ngram_discount: f64,
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics_out: PathBuf,
    pub round_log: PathBuf,
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let central = CentralConfig::default();
        let fed = FedConfig::default();
        Self {
            seed: 0,
            vocab_size: 500,
            embed_dim: 16,
            hidden: 32,
            source_order: 3,
            source_vocab: 500,
            sentences: 10_000,
            split_train: 0.8,
            split_test: 0.1,
            split_eval: 0.1,
            lr: central.lr,
            batch_size: central.batch_size,
            max_steps: central.max_steps,
            eval_every: central.eval_every,
            clip_norm: 0.0,
            clients: 50,
            eval_clients: 10,
            clients_per_round_min: fed.clients_per_round_min,
            clients_per_round_max: fed.clients_per_round_max,
            client_lr: fed.client_lr,
            client_batch_size: fed.client_batch_size,
            client_epochs: fed.client_epochs,
            rounds: fed.total_rounds,
            eligibility_prob: fed.eligibility_prob,
            server_lr: fed.server_lr,
            server_momentum: fed.server_momentum,
            ngram_order: 3,
            ngram_discount: crate::ngram::DEFAULT_DISCOUNT,
            corpus: "corpus.txt".into(),
            vocab: "vocab.txt".into(),
            checkpoint: "model.ckpt".into(),
            metrics_out: "metrics.csv".into(),
            round_log: PathBuf::new(),
            record_wall_time: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for `{key}`: {value:?}")))
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies the assignments in `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "source_order" => self.source_order = parse(key, value)?,
            "source_vocab" => self.source_vocab = parse(key, value)?,
            "sentences" => self.sentences = parse(key, value)?,
            "split_train" => self.split_train = parse(key, value)?,
            "split_test" => self.split_test = parse(key, value)?,
            "split_eval" => self.split_eval = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "clients" => self.clients = parse(key, value)?,
            "eval_clients" => self.eval_clients = parse(key, value)?,
            "clients_per_round_min" => self.clients_per_round_min = parse(key, value)?,
            "clients_per_round_max" => self.clients_per_round_max = parse(key, value)?,
            "client_lr" => self.client_lr = parse(key, value)?,
            "client_batch_size" => self.client_batch_size = parse(key, value)?,
            "client_epochs" => self.client_epochs = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "eligibility_prob" => self.eligibility_prob = parse(key, value)?,
            "server_lr" => self.server_lr = parse(key, value)?,
            "server_momentum" => self.server_momentum = parse(key, value)?,
            "ngram_order" => self.ngram_order = parse(key, value)?,
            "ngram_discount" => self.ngram_discount = parse(key, value)?,
            "corpus" => self.corpus = value.into(),
            "vocab" => self.vocab = value.into(),
            "checkpoint" => self.checkpoint = value.into(),
            "metrics_out" => self.metrics_out = value.into(),
            "round_log" => self.round_log = value.into(),
            "record_wall_time" => self.record_wall_time = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let p = |p: &PathBuf| p.display().to_string();
        Some(match key {
            "seed" => self.seed.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "hidden" => self.hidden.to_string(),
            "source_order" => self.source_order.to_string(),
            "source_vocab" => self.source_vocab.to_string(),
            "sentences" => self.sentences.to_string(),
            "split_train" => self.split_train.to_string(),
            "split_test" => self.split_test.to_string(),
            "split_eval" => self.split_eval.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_steps" => self.max_steps.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "clients" => self.clients.to_string(),
            "eval_clients" => self.eval_clients.to_string(),
            "clients_per_round_min" => self.clients_per_round_min.to_string(),
            "clients_per_round_max" => self.clients_per_round_max.to_string(),
            "client_lr" => self.client_lr.to_string(),
            "client_batch_size" => self.client_batch_size.to_string(),
            "client_epochs" => self.client_epochs.to_string(),
            "rounds" => self.rounds.to_string(),
            "eligibility_prob" => self.eligibility_prob.to_string(),
            "server_lr" => self.server_lr.to_string(),
            "server_momentum" => self.server_momentum.to_string(),
            "ngram_order" => self.ngram_order.to_string(),
            "ngram_discount" => self.ngram_discount.to_string(),
            "corpus" => p(&self.corpus),
            "vocab" => p(&self.vocab),
            "checkpoint" => p(&self.checkpoint),
            "metrics_out" => p(&self.metrics_out),
            "round_log" => p(&self.round_log),
            "record_wall_time" => self.record_wall_time.to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value and a comment; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let _ = writeln!(out, "# {doc}\n{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    fn clip(&self) -> Option<f64> {
        (self.clip_norm > 0.0).then_some(self.clip_norm)
    }

    pub fn cifg_config(&self, vocab_size: usize) -> Result<CifgConfig> {
        CifgConfig::new(vocab_size, self.embed_dim, self.hidden)
    }

    pub fn central_config(&self) -> CentralConfig {
        CentralConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            eval_every: self.eval_every,
            seed: self.seed,
            clip_norm: self.clip(),
            record_wall_time: self.record_wall_time,
        }
    }

    pub fn fed_config(&self) -> FedConfig {
        FedConfig {
            clients_per_round_min: self.clients_per_round_min,
            clients_per_round_max: self.clients_per_round_max,
            client_lr: self.client_lr,
            client_batch_size: self.client_batch_size,
            client_epochs: self.client_epochs,
            total_rounds: self.rounds,
            eligibility_prob: self.eligibility_prob,
            server_lr: self.server_lr,
            server_momentum: self.server_momentum,
            eval_every: self.eval_every,
            seed: self.seed,
            clip_norm: self.clip(),
            record_wall_time: self.record_wall_time,
        }
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        (self.split_train, self.split_test, self.split_eval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let cfg = RunConfig::default();
        for (key, _) in KEYS {
            assert!(cfg.get(key).is_some(), "{key}");
        }
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = RunConfig::from_text("# run\nseed = 7  # trailing\n\nlr=0.25\ncorpus = data/c.txt\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lr, 0.25);
        assert_eq!(cfg.corpus, PathBuf::from("data/c.txt"));
        assert_eq!(cfg.hidden, RunConfig::default().hidden);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::from_text("nope = 1"), Err(Error::Config(_))));
        assert!(RunConfig::from_text("seed = x").is_err());
        assert!(RunConfig::from_text("seed").is_err());
    }

    #[test]
    fn clip_zero_disables() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.central_config().clip_norm, None);
        cfg.set("clip_norm", "2.5").unwrap();
        assert_eq!(cfg.fed_config().clip_norm, Some(2.5));
    }
}
