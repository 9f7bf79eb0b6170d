//! Federated averaging over 30 simulated clients with Nesterov server
//! momentum, writing a per-round JSON log.
//!
//! cargo run --release --example federated_training

use fedlm::corpus::{build_vocab, partition_clients, synthesize_corpus, tokenize_all, trainable};
use fedlm::eval::metrics_csv;
use fedlm::fedavg::{run_federated, FedConfig};
use fedlm::{CifgConfig, CifgModel};

fn main() -> anyhow::Result<()> {
    let text = synthesize_corpus(3, 300, 7_000, 1)?;
    let vocab = build_vocab(&text[..6_000], 300)?;
    let seqs = trainable(&tokenize_all(&text, &vocab));
    let (train, eval) = seqs.split_at(6_000);
    let clients = partition_clients(train, 30, 200, 2)?;
    let eval_clients = partition_clients(eval, 8, 120, 3)?;

    let model = CifgModel::<f32>::init(CifgConfig::new(vocab.len(), 16, 32)?, 3);
    let config = FedConfig {
        clients_per_round_min: 5,
        clients_per_round_max: 10,
        client_lr: 0.5,
        client_batch_size: 20,
        total_rounds: 40,
        eligibility_prob: 0.8,
        eval_every: 10,
        seed: 5,
        clip_norm: Some(5.0),
        ..FedConfig::default()
    };
    let log = std::env::temp_dir().join("fedlm_rounds.jsonl");
    let (_model, rows) = run_federated(model, &clients, &eval_clients, &config, Some(&log))?;
    print!("{}", metrics_csv(&rows));
    let first = std::fs::read_to_string(&log)?.lines().next().unwrap_or_default().to_string();
    println!("round log {}: {first}", log.display());
    Ok(())
}
