//! Per-client evaluation with a leave-one-client-out jackknife: the error
//! bar shrinks as more clients (and so more sentences) take part.
//!
//! cargo run --release --example federated_eval

use fedlm::central::{train_centralized, CentralConfig};
use fedlm::corpus::{build_vocab, partition_clients, synthesize_corpus, tokenize_all, trainable, CorpusSplit};
use fedlm::fedavg::federated_eval;
use fedlm::{CifgConfig, CifgModel};

fn main() -> anyhow::Result<()> {
    let text = synthesize_corpus(3, 300, 9_000, 8)?;
    let vocab = build_vocab(&text[..5_000], 300)?;
    let seqs = trainable(&tokenize_all(&text, &vocab));
    let (train, eval) = seqs.split_at(5_000);
    let data = CorpusSplit {
        train: train.to_vec(),
        test: vec![],
        eval: eval[..500].to_vec(),
        seed: 0,
    };
    let config = CentralConfig {
        lr: 0.5,
        max_steps: 600,
        eval_every: 0,
        clip_norm: Some(5.0),
        ..CentralConfig::default()
    };
    let model = CifgModel::<f32>::init(CifgConfig::new(vocab.len(), 16, 32)?, 1);
    let (model, _) = train_centralized(model, &data, &config)?;

    let shards = partition_clients(eval, 80, 50, 9)?;
    for clients in [1, 5, 20, 80] {
        let est = federated_eval(&model, &shards[..clients], 1)?;
        let note = if est.defined { "" } else { " (undefined with one client)" };
        println!("{clients:>3} clients: top1 {:.4} +/- {:.4}{note}", est.value, est.stderr);
    }
    Ok(())
}
