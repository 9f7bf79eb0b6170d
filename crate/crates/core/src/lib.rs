//! Next-word prediction with a CIFG recurrent language model trained either
//! centrally with minibatch SGD or by federated averaging over simulated
//! client devices, alongside a backoff n-gram baseline.
//!
//! Runnable examples live in `examples/`; `cargo run --example <name>`.

pub mod central;
pub mod cifg;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fedavg;
pub mod ngram;
pub mod nn;

pub use cifg::{CifgConfig, CifgModel};
pub use corpus::{ClientShard, TokenId, TokenSeq, Vocabulary};
pub use error::{Error, Result};
pub use eval::{MetricsRow, NextWordPredictor};
