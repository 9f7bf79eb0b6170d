//! Generate a synthetic corpus, build a vocabulary and deal it out to
//! simulated clients with log-normal shard sizes.
//!
//! cargo run --release --example synth_corpus

use fedlm::corpus::{build_vocab, partition_clients, synthesize_corpus, tokenize_all, trainable};

fn main() -> anyhow::Result<()> {
    let sentences = synthesize_corpus(3, 500, 5_000, 7)?;
    for s in &sentences[..5] {
        println!("  {s}");
    }
    let words: usize = sentences.iter().map(|s| s.split_whitespace().count()).sum();
    println!("{} sentences, {:.2} words per sentence", sentences.len(), words as f64 / sentences.len() as f64);

    let vocab = build_vocab(&sentences, 200)?;
    let seqs = trainable(&tokenize_all(&sentences, &vocab));
    let unk = seqs.iter().flat_map(|s| s.ids()).filter(|&&id| id == fedlm::corpus::UNK).count();
    println!("vocabulary of {} ({} tokens mapped to <unk>)", vocab.len(), unk);

    let shards = partition_clients(&seqs, 20, 200, 1)?;
    let mut sizes: Vec<usize> = shards.iter().map(|s| s.n_k()).collect();
    sizes.sort_unstable();
    println!("20 client shards, sizes {sizes:?}");
    Ok(())
}
