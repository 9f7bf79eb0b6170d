//! Train backoff n-gram baselines of increasing order, check them against
//! the brute-force oracle and report recall.
//!
//! cargo run --release --example ngram_baseline

use fedlm::corpus::{build_vocab, synthesize_corpus, tokenize_all, trainable, BOS};
use fedlm::eval::recall_counts;
use fedlm::ngram::{oracle_predict, predict_topk_ngram, train_ngram, DEFAULT_DISCOUNT};

fn main() -> anyhow::Result<()> {
    let text = synthesize_corpus(3, 300, 12_000, 5)?;
    let vocab = build_vocab(&text[..10_000], 300)?;
    let seqs = trainable(&tokenize_all(&text, &vocab));
    let (train, eval) = seqs.split_at(10_000);

    for order in 1..=4 {
        let table = train_ngram(train, order, DEFAULT_DISCOUNT, vocab.len())?;
        let r = recall_counts(&table, eval, &[1, 3])?;
        println!("order {order}: top1 {:.4} top3 {:.4}", r.recall(1)?, r.recall(3)?);
    }

    // the oracle rescans the raw corpus, so keep it small
    let small = &train[..200];
    let table = train_ngram(small, 3, DEFAULT_DISCOUNT, vocab.len())?;
    let ctx = [BOS, small[0].ids()[1]];
    let fast: Vec<u32> = predict_topk_ngram(&table, &ctx, 5).into_iter().map(|(id, _)| id).collect();
    let slow = oracle_predict(small, vocab.len(), 3, DEFAULT_DISCOUNT, &ctx, 5);
    let words: Vec<&str> = fast.iter().filter_map(|&id| vocab.word(id)).collect();
    println!("after {:?}: {words:?} (oracle agrees: {})", vocab.word(ctx[1]).unwrap_or("?"), fast == slow);
    Ok(())
}
