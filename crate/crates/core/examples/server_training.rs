//! Centralized minibatch SGD on a synthetic corpus, printing the metrics CSV.
//!
//! cargo run --release --example server_training

use fedlm::central::{train_centralized, CentralConfig};
use fedlm::corpus::{build_vocab, split, synthesize_corpus, tokenize_all, trainable, CorpusSplit};
use fedlm::eval::metrics_csv;
use fedlm::{CifgConfig, CifgModel};

fn main() -> anyhow::Result<()> {
    let text = synthesize_corpus(3, 300, 6_000, 1)?;
    let parts = split(&text, (0.9, 0.0, 0.1), 2)?;
    let vocab = build_vocab(&parts.train, 300)?;
    let enc = |s: &[String]| trainable(&tokenize_all(s, &vocab));
    let data = CorpusSplit {
        train: enc(&parts.train),
        test: vec![],
        eval: enc(&parts.eval),
        seed: parts.seed,
    };

    let model = CifgModel::<f32>::init(CifgConfig::new(vocab.len(), 16, 32)?, 3);
    let config = CentralConfig {
        lr: 0.5,
        batch_size: 50,
        max_steps: 1_000,
        eval_every: 200,
        seed: 4,
        clip_norm: Some(5.0),
        record_wall_time: true,
    };
    let (_model, rows) = train_centralized(model, &data, &config)?;
    print!("{}", metrics_csv(&rows));
    Ok(())
}
