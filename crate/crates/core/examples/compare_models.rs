//! Side-by-side recall of a trained CIFG, a trigram and a unigram baseline.
//!
//! cargo run --release --example compare_models

use fedlm::central::{train_centralized, CentralConfig};
use fedlm::corpus::{build_vocab, synthesize_corpus, tokenize_all, trainable, CorpusSplit};
use fedlm::eval::{compare_report, NextWordPredictor};
use fedlm::ngram::{train_ngram, unigram_baseline, DEFAULT_DISCOUNT};
use fedlm::{CifgConfig, CifgModel};

fn main() -> anyhow::Result<()> {
    let text = synthesize_corpus(3, 300, 11_000, 2)?;
    let vocab = build_vocab(&text[..10_000], 300)?;
    let seqs = trainable(&tokenize_all(&text, &vocab));
    let (train, eval) = seqs.split_at(10_000);
    let data = CorpusSplit {
        train: train.to_vec(),
        test: vec![],
        eval: eval.to_vec(),
        seed: 0,
    };
    let config = CentralConfig {
        lr: 0.5,
        max_steps: 2_000,
        eval_every: 0,
        clip_norm: Some(5.0),
        ..CentralConfig::default()
    };
    let model = CifgModel::<f32>::init(CifgConfig::new(vocab.len(), 16, 32)?, 1);
    let (cifg, _) = train_centralized(model, &data, &config)?;
    let trigram = train_ngram(train, 3, DEFAULT_DISCOUNT, vocab.len())?;
    let unigram = unigram_baseline(train, vocab.len())?;

    let models: [(&str, &dyn NextWordPredictor); 3] = [("cifg", &cifg), ("trigram", &trigram), ("unigram", &unigram)];
    let report = compare_report(&models, eval, &[1, 3])?;
    print!("{}", report.to_text());
    Ok(())
}
