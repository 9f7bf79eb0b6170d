//! Absolute-discounting backoff n-gram model used as the comparison
//! baseline.
//!
//! For a context `ctx` seen `c(ctx)` times with `T(ctx)` distinct successors:
//!
//! ```text
//! P(w | ctx) = max(c(ctx, w) - d, 0) / c(ctx) + d * T(ctx) / c(ctx) * P(w | ctx')
//! ```
//!
//! where `ctx'` drops the oldest token. Prediction starts at the longest
//! suffix of the query (at most `order - 1` tokens) that occurs in training.
//! The recursion bottoms out at the maximum-likelihood unigram, so words never
//! seen in training get probability zero and are never offered.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::corpus::{TokenId, TokenSeq, BOS};
use crate::error::{Error, Result};
use crate::eval::{top_k_candidates, NextWordPredictor};

pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const MAX_ORDER: usize = 5;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContextCounts {
    pub total: u64,
    pub next: BTreeMap<TokenId, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NgramTable {
    order: usize,
    discount: f64,
    vocab_size: usize,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

fn check_params(order: usize, discount: f64) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::invalid(format!("n-gram order must be in [1, 5], got {order}")));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::invalid(format!("discount must be in (0, 1), got {discount}")));
    }
    Ok(())
}

/// Counts every (context, next) pair with context lengths `0..order`.
/// BOS appears in contexts but is never counted as a successor.
pub fn train_ngram(
    corpus: &[TokenSeq],
    order: usize,
    discount: f64,
    vocab_size: usize,
) -> Result<NgramTable> {
    check_params(order, discount)?;
    let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    for seq in corpus {
        let ids = seq.ids();
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange { id, vocab_size });
        }
        for t in 1..ids.len() {
            for len in 0..order.min(t + 1) {
                let entry = counts.entry(ids[t - len..t].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(ids[t]).or_default() += 1;
            }
        }
    }
    Ok(NgramTable {
        order,
        discount,
        vocab_size,
        counts,
    })
}

/// Applies one discounting level on top of the lower-order distribution.
fn interpolate(lower: &mut [f64], ctx: &ContextCounts, discount: f64) {
    let total = ctx.total as f64;
    let backoff = discount * ctx.next.len() as f64 / total;
    for p in lower.iter_mut() {
        *p *= backoff;
    }
    for (&w, &c) in &ctx.next {
        lower[w as usize] += (c as f64 - discount).max(0.0) / total;
    }
}

fn unigram(ctx: Option<&ContextCounts>, vocab_size: usize) -> Vec<f64> {
    let mut dist = vec![0.0; vocab_size];
    if let Some(ctx) = ctx {
        let total = ctx.total as f64;
        for (&w, &c) in &ctx.next {
            dist[w as usize] = c as f64 / total;
        }
    }
    dist
}

impl NgramTable {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context(&self, ctx: &[TokenId]) -> Option<&ContextCounts> {
        self.counts.get(ctx)
    }

    pub fn count(&self, ctx: &[TokenId], next: TokenId) -> u64 {
        self.context(ctx)
            .and_then(|c| c.next.get(&next).copied())
            .unwrap_or(0)
    }

    /// Length of the longest suffix of `context` used as the starting level.
    pub fn matched_length(&self, context: &[TokenId]) -> usize {
        let max = (self.order - 1).min(context.len());
        (1..=max)
            .rev()
            .find(|&len| self.counts.contains_key(&context[context.len() - len..]))
            .unwrap_or(0)
    }

    /// Full next-token distribution over the vocabulary.
    pub fn distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let mut dist = unigram(self.counts.get(&[][..]), self.vocab_size);
        let top = self.matched_length(context);
        for len in 1..=top {
            let ctx = &self.counts[&context[context.len() - len..]];
            interpolate(&mut dist, ctx, self.discount);
        }
        dist
    }

    pub fn prob(&self, context: &[TokenId], next: TokenId) -> f64 {
        self.distribution(context)[next as usize]
    }

    /// `context-ids<TAB>next-id<TAB>count`, one line per pair, sorted by
    /// context then next id. Context ids are space-separated.
    pub fn dump(&self) -> String {
        let mut keys: Vec<&Vec<TokenId>> = self.counts.keys().collect();
        keys.sort();
        let mut out = String::new();
        for ctx in keys {
            let ctx_str = ctx.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(" ");
            for (next, count) in &self.counts[ctx].next {
                let _ = writeln!(out, "{ctx_str}\t{next}\t{count}");
            }
        }
        out
    }

    /// Checks the suffix-closure invariant of the count table.
    pub fn is_suffix_closed(&self) -> bool {
        self.counts
            .keys()
            .filter(|k| !k.is_empty())
            .all(|k| self.counts.contains_key(&k[1..]))
    }
}

/// Top-`k` next words with specials masked; zero-probability words are not
/// returned.
pub fn predict_topk_ngram(table: &NgramTable, context: &[TokenId], k: usize) -> Vec<(TokenId, f64)> {
    let dist = table.distribution(context);
    top_k_candidates(
        dist.iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(id, &p)| (id as TokenId, p)),
        k,
    )
}

impl NextWordPredictor for NgramTable {
    fn predict_topk(&self, context: &[TokenId], k: usize) -> Result<Vec<(TokenId, f64)>> {
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        Ok(predict_topk_ngram(self, context, k))
    }
}

/// Brute-force reference for [`predict_topk_ngram`]: rescans the raw corpus
/// for every context level instead of consulting a count table.
pub fn oracle_predict(
    corpus: &[TokenSeq],
    vocab_size: usize,
    order: usize,
    discount: f64,
    context: &[TokenId],
    k: usize,
) -> Vec<TokenId> {
    oracle_distribution(corpus, vocab_size, order, discount, context)
        .map(|dist| {
            top_k_candidates(
                dist.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(id, &p)| (id as TokenId, p)),
                k,
            )
            .into_iter()
            .map(|(id, _)| id)
            .collect()
        })
        .unwrap_or_default()
}

pub fn oracle_distribution(
    corpus: &[TokenSeq],
    vocab_size: usize,
    order: usize,
    discount: f64,
    context: &[TokenId],
) -> Option<Vec<f64>> {
    // successors of `ctx` by direct scan
    let scan = |ctx: &[TokenId]| -> ContextCounts {
        let mut c = ContextCounts::default();
        for seq in corpus {
            let ids = seq.ids();
            for t in 1..ids.len() {
                if t >= ctx.len() && &ids[t - ctx.len()..t] == ctx {
                    c.total += 1;
                    *c.next.entry(ids[t]).or_default() += 1;
                }
            }
        }
        c
    };
    let base = scan(&[]);
    if base.total == 0 {
        return None;
    }
    let mut levels = Vec::new();
    for len in 1..order.min(context.len() + 1) {
        let c = scan(&context[context.len() - len..]);
        levels.push(c);
    }
    while levels.last().is_some_and(|c| c.total == 0) {
        levels.pop();
    }
    let mut dist = unigram(Some(&base), vocab_size);
    for c in &levels {
        interpolate(&mut dist, c, discount);
    }
    Some(dist)
}

/// Unigram baseline: the order-1 model.
pub fn unigram_baseline(corpus: &[TokenSeq], vocab_size: usize) -> Result<NgramTable> {
    train_ngram(corpus, 1, DEFAULT_DISCOUNT, vocab_size)
}

/// Whether a context starts a sentence.
pub fn is_sentence_start(context: &[TokenId]) -> bool {
    context.first() == Some(&BOS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, tokenize_all, EOS};

    fn corpus(lines: &[&str]) -> (Vec<TokenSeq>, usize, crate::corpus::Vocabulary) {
        let vocab = build_vocab(lines, 50).unwrap();
        (tokenize_all(lines, &vocab), vocab.len(), vocab)
    }

    #[test]
    fn hand_counts_order_two() {
        let (c, v, vocab) = corpus(&["a"]);
        let a = vocab.id("a");
        let t = train_ngram(&c, 2, 0.5, v).unwrap();
        assert_eq!(t.count(&[BOS], a), 1);
        assert_eq!(t.count(&[a], EOS), 1);
        assert!(t.is_suffix_closed());
    }

    #[test]
    fn unigram_total_excludes_bos() {
        let (c, v, _) = corpus(&["a b c", "b", "c c a b"]);
        let t = train_ngram(&c, 3, 0.5, v).unwrap();
        let tokens: usize = c.iter().map(|s| s.len() - 1).sum();
        assert_eq!(t.context(&[]).unwrap().total as usize, tokens);
        assert_eq!(t.count(&[], BOS), 0);
    }

    #[test]
    fn doubling_corpus_doubles_counts() {
        let (c, v, _) = corpus(&["a b c", "b a", "c"]);
        let t1 = train_ngram(&c, 3, 0.5, v).unwrap();
        let twice: Vec<TokenSeq> = c.iter().chain(c.iter()).cloned().collect();
        let t2 = train_ngram(&twice, 3, 0.5, v).unwrap();
        for (ctx, cc) in &t1.counts {
            let cc2 = &t2.counts[ctx];
            assert_eq!(cc2.total, 2 * cc.total);
            for (w, n) in &cc.next {
                assert_eq!(cc2.next[w], 2 * n);
            }
        }
        assert_eq!(t1.counts.len(), t2.counts.len());
    }

    #[test]
    fn top_one_after_a_is_b() {
        let (c, v, vocab) = corpus(&["a b", "a c", "a b"]);
        let t = train_ngram(&c, 2, DEFAULT_DISCOUNT, v).unwrap();
        let top = predict_topk_ngram(&t, &[BOS, vocab.id("a")], 1);
        assert_eq!(top[0].0, vocab.id("b"));
    }

    #[test]
    fn empty_context_uses_unigram() {
        let (c, v, vocab) = corpus(&["a b", "b b", "c"]);
        let t = train_ngram(&c, 3, DEFAULT_DISCOUNT, v).unwrap();
        let top = predict_topk_ngram(&t, &[], 2);
        assert_eq!(top[0].0, vocab.id("b"));
        assert_eq!(top[1].0, vocab.id("a"));
        assert!((top[0].1 - 3.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn distributions_normalize() {
        let (c, v, vocab) = corpus(&["a b c d", "a b", "b c a", "d d d"]);
        let t = train_ngram(&c, 3, 0.6, v).unwrap();
        let (a, b, z) = (vocab.id("a"), vocab.id("b"), vocab.id("zz"));
        for ctx in [vec![], vec![BOS], vec![BOS, a], vec![a, b], vec![z, z], vec![b, a, b]] {
            let s: f64 = t.distribution(&ctx).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "{ctx:?}: {s}");
        }
    }

    #[test]
    fn fewer_candidates_than_k() {
        let (c, v, _) = corpus(&["a"]);
        let t = train_ngram(&c, 2, 0.5, v).unwrap();
        let got = predict_topk_ngram(&t, &[BOS], 10);
        assert_eq!(got.len(), 1);
        assert_eq!(oracle_predict(&c, v, 2, 0.5, &[BOS], 10), vec![got[0].0]);
    }

    #[test]
    fn parameter_validation() {
        let (c, v, _) = corpus(&["a"]);
        assert!(train_ngram(&c, 0, 0.5, v).is_err());
        assert!(train_ngram(&c, 6, 0.5, v).is_err());
        assert!(train_ngram(&c, 2, 0.0, v).is_err());
        assert!(train_ngram(&c, 2, 1.0, v).is_err());
    }

    #[test]
    fn higher_order_fits_training_data_better() {
        let (c, v, _) = corpus(&["a b c a b", "b c a", "c a b c", "a a b", "b b c c"]);
        let loglik = |order: usize| -> f64 {
            let t = train_ngram(&c, order, 1e-6, v).unwrap();
            c.iter()
                .flat_map(|s| (1..s.len()).map(move |i| (s.clone(), i)))
                .map(|(s, i)| t.prob(&s.ids()[..i], s.ids()[i]).ln())
                .sum()
        };
        let l: Vec<f64> = (1..=4).map(loglik).collect();
        for w in l.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{l:?}");
        }
    }

    #[test]
    fn dump_format() {
        let (c, v, _) = corpus(&["a"]);
        let t = train_ngram(&c, 2, 0.5, v).unwrap();
        assert_eq!(t.dump(), "\t1\t1\n\t3\t1\n0\t3\t1\n3\t1\t1\n");
    }
}
