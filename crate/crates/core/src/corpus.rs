//! Corpus ingestion: tokenization, vocabulary, splits, client shards and a
//! synthetic sentence source for desk-scale experiments.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Geometric, LogNormal};

use crate::error::{Error, Result};
use crate::nn::{derive_seed, rng_from};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
pub const NUM_SPECIALS: usize = 3;

pub const BOS_WORD: &str = "<s>";
pub const EOS_WORD: &str = "</s>";
pub const UNK_WORD: &str = "<unk>";

#[inline]
pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Lowercased whitespace tokenization.
pub fn split_words(sentence: &str) -> impl Iterator<Item = String> + '_ {
    sentence.split_whitespace().map(str::to_lowercase)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered list of non-special words.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = vec![BOS_WORD.into(), EOS_WORD.into(), UNK_WORD.into()];
        all.extend(words.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (id, w) in all.iter().enumerate() {
            if index.insert(w.clone(), id as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { words: all, index })
    }

    /// Total size including the three specials.
    #[inline]
    pub fn len(&self) -> usize {
        self.words.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = fs::File::create(path)?;
        out.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    /// `#V=<n>` header, then one non-special word per line (line i is id i+3).
    pub fn to_text(&self) -> String {
        let mut s = format!("#V={}\n", self.len());
        for w in &self.words[NUM_SPECIALS..] {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("vocabulary file is empty".into()))?;
        let declared: usize = header
            .strip_prefix("#V=")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("bad vocabulary header {header:?}")))?;
        let vocab = Self::from_words(lines.map(str::to_owned))?;
        if vocab.len() != declared {
            return Err(Error::Format(format!(
                "vocabulary header declares {declared} entries, file has {}",
                vocab.len()
            )));
        }
        Ok(vocab)
    }
}

/// Keeps the `capacity - 3` most frequent words; ties go to the
/// lexicographically smaller word.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], capacity: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if capacity < NUM_SPECIALS + 1 {
        return Err(Error::invalid(format!("vocabulary size must be >= 4, got {capacity}")));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for line in corpus {
        for w in split_words(line.as_ref()) {
            if matches!(w.as_str(), BOS_WORD | EOS_WORD | UNK_WORD) {
                continue;
            }
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(capacity - NUM_SPECIALS);
    Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w))
}

/// A tokenized sentence: `[BOS, w1, ..., wn, EOS]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<TokenId>);

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>, vocab_size: usize) -> Result<Self> {
        if ids.len() < 2 || ids[0] != BOS || *ids.last().unwrap() != EOS {
            return Err(Error::invalid("token sequence must start with BOS and end with EOS"));
        }
        if ids[1..].contains(&BOS) {
            return Err(Error::invalid("BOS may only appear first"));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange { id, vocab_size });
        }
        Ok(Self(ids))
    }

    /// Wraps word ids with BOS/EOS.
    pub fn from_words(words: &[TokenId], vocab_size: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(words);
        ids.push(EOS);
        Self::new(ids, vocab_size)
    }

    #[inline]
    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of next-token prediction positions.
    #[inline]
    pub fn num_predictions(&self) -> usize {
        self.0.len() - 1
    }

    pub fn starts_with_bos(&self) -> bool {
        self.0.first() == Some(&BOS)
    }
}

pub fn tokenize(sentence: &str, vocab: &Vocabulary) -> TokenSeq {
    let mut ids = vec![BOS];
    ids.extend(split_words(sentence).map(|w| vocab.id(&w)));
    ids.push(EOS);
    TokenSeq(ids)
}

pub fn tokenize_all<S: AsRef<str>>(corpus: &[S], vocab: &Vocabulary) -> Vec<TokenSeq> {
    corpus.iter().map(|s| tokenize(s.as_ref(), vocab)).collect()
}

/// Inverse of [`tokenize`] with specials stripped.
pub fn detokenize(seq: &TokenSeq, vocab: &Vocabulary) -> String {
    seq.ids()
        .iter()
        .filter(|&&id| id != BOS && id != EOS)
        .map(|&id| vocab.word(id).unwrap_or(UNK_WORD))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Only sequences that begin with a start-of-sentence token are used for
/// training.
pub fn trainable(seqs: &[TokenSeq]) -> Vec<TokenSeq> {
    seqs.iter().filter(|s| s.starts_with_bos()).cloned().collect()
}

/// One simulated device's local sentence cache.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientShard {
    pub client_id: u32,
    sentences: Vec<TokenSeq>,
}

impl ClientShard {
    pub fn new(client_id: u32, sentences: Vec<TokenSeq>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::invalid(format!("client {client_id} has an empty shard")));
        }
        Ok(Self {
            client_id,
            sentences,
        })
    }

    pub fn sentences(&self) -> &[TokenSeq] {
        &self.sentences
    }

    /// Example count: the number of sentences held.
    pub fn n_k(&self) -> usize {
        self.sentences.len()
    }
}

/// Log-space standard deviation of simulated cache sizes.
pub const SHARD_SIGMA: f64 = 0.5;

/// Deals sentences into `num_clients` shards whose sizes follow a log-normal
/// distribution with mean `mean_shard`. Sentences are drawn without
/// replacement from a seeded shuffle; every shard keeps at least one.
pub fn partition_clients(
    corpus: &[TokenSeq],
    num_clients: usize,
    mean_shard: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if num_clients == 0 {
        return Err(Error::invalid("num_clients must be >= 1"));
    }
    if corpus.len() < num_clients {
        return Err(Error::InsufficientSentences {
            needed: num_clients,
            available: corpus.len(),
        });
    }
    if num_clients == 1 {
        return Ok(vec![ClientShard::new(0, corpus.to_vec())?]);
    }
    let mean = mean_shard.max(1) as f64;
    let mu = mean.ln() - SHARD_SIGMA * SHARD_SIGMA / 2.0;
    let sizes_dist = LogNormal::new(mu, SHARD_SIGMA).expect("valid log-normal");
    let mut size_rng = rng_from(derive_seed(seed, "shard-size", 0));

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng_from(derive_seed(seed, "shard-order", 0)));

    let mut shards = Vec::with_capacity(num_clients);
    let mut next = 0usize;
    for client in 0..num_clients {
        let wanted = (sizes_dist.sample(&mut size_rng).round() as usize).max(1);
        let remaining = corpus.len() - next;
        let reserve = num_clients - client - 1;
        let take = wanted.min(remaining - reserve);
        let sentences = order[next..next + take]
            .iter()
            .map(|&i| corpus[i].clone())
            .collect();
        next += take;
        shards.push(ClientShard::new(client as u32, sentences)?);
    }
    Ok(shards)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub eval: Vec<T>,
    pub seed: u64,
}

/// Seeded shuffled partition into train/test/eval by the given fractions.
pub fn split<T: Clone>(corpus: &[T], fractions: (f64, f64, f64), seed: u64) -> Result<CorpusSplit<T>> {
    let (ftrain, ftest, feval) = fractions;
    let ok = [ftrain, ftest, feval]
        .iter()
        .all(|f| f.is_finite() && *f >= 0.0)
        && ((ftrain + ftest + feval) - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(Error::invalid(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let n = corpus.len();
    let n_train = ((n as f64) * ftrain).round() as usize;
    let n_test = (((n as f64) * ftest).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(derive_seed(seed, "split", 0)));
    let pick = |range: &[usize]| range.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    Ok(CorpusSplit {
        train: pick(&order[..n_train]),
        test: pick(&order[n_train..n_train + n_test]),
        eval: pick(&order[n_train + n_test..]),
        seed,
    })
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let file = fs::File::open(path)?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line?);
    }
    Ok(lines)
}

pub fn write_corpus<S: AsRef<str>>(path: impl AsRef<Path>, sentences: &[S]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for s in sentences {
        out.write_all(s.as_ref().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Mean number of words per synthetic sentence.
pub const MEAN_SENTENCE_WORDS: f64 = 4.1;

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "nu", "pe", "ra", "so", "ti", "va", "ze", "bo", "du", "fe", "gi", "ha",
    "ju", "ke", "ly", "mo", "na",
];

const SUCCESSORS: usize = 6;
const TRIGRAM_SUCCESSORS: usize = 4;

/// Randomly generated n-gram source: a Zipfian unigram, a sparse bigram
/// table and (for order 3) a hashed sparse trigram component, mixed
/// linearly. Sentence lengths are geometric with mean 4.1 words.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    order: usize,
    seed: u64,
    words: Vec<String>,
    unigram: WeightedIndex<f64>,
    /// Row `v + 1` lists successors of word `v`; row 0 is the sentence start.
    successors: Vec<[usize; SUCCESSORS]>,
    successor_weights: WeightedIndex<f64>,
    trigram_weights: WeightedIndex<f64>,
    mixture: WeightedIndex<f64>,
    length: Geometric,
}

impl SyntheticSource {
    pub fn new(order: usize, vocab_size: usize, seed: u64) -> Result<Self> {
        if !(2..=3).contains(&order) {
            return Err(Error::invalid(format!("source order must be 2 or 3, got {order}")));
        }
        if vocab_size < 10 {
            return Err(Error::invalid(format!("source vocabulary must be >= 10, got {vocab_size}")));
        }
        let syllables = {
            let mut n = 2;
            while SYLLABLES.len().pow(n as u32) < vocab_size {
                n += 1;
            }
            n
        };
        let words: Vec<String> = (0..vocab_size)
            .map(|mut i| {
                let mut w = String::with_capacity(2 * syllables);
                for _ in 0..syllables {
                    w.push_str(SYLLABLES[i % SYLLABLES.len()]);
                    i /= SYLLABLES.len();
                }
                w
            })
            .collect();
        let unigram =
            WeightedIndex::new((0..vocab_size).map(|r| 1.0 / (r + 1) as f64)).expect("zipf weights");
        let mut rng = rng_from(derive_seed(seed, "source-bigram", 0));
        let successors = (0..=vocab_size)
            .map(|_| {
                let mut row = [0usize; SUCCESSORS];
                for slot in row.iter_mut() {
                    *slot = unigram.sample(&mut rng);
                }
                row
            })
            .collect();
        let geometric = |n: usize| WeightedIndex::new((0..n).map(|j| 0.5f64.powi(j as i32))).unwrap();
        let mixture = if order == 2 {
            WeightedIndex::new([0.25, 0.75, 0.0]).unwrap()
        } else {
            WeightedIndex::new([0.2, 0.45, 0.35]).unwrap()
        };
        Ok(Self {
            order,
            seed,
            words,
            unigram,
            successors,
            successor_weights: geometric(SUCCESSORS),
            trigram_weights: geometric(TRIGRAM_SUCCESSORS),
            mixture,
            length: Geometric::new(1.0 / MEAN_SENTENCE_WORDS).expect("valid p"),
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn trigram_successor<R: Rng>(&self, prev2: usize, prev1: usize, rng: &mut R) -> usize {
        let ctx = (prev2 as u64) * (self.words.len() as u64 + 1) + prev1 as u64;
        let mut table_rng = rng_from(derive_seed(self.seed, "source-trigram", ctx));
        let slot = self.trigram_weights.sample(rng);
        let mut pick = 0;
        for _ in 0..=slot {
            pick = table_rng.random_range(0..self.words.len());
        }
        pick
    }

    fn sample_sentence<R: Rng>(&self, rng: &mut R) -> String {
        let len = 1 + self.length.sample(rng) as usize;
        // context indices shifted by one; 0 is the sentence start
        let (mut prev2, mut prev1) = (0usize, 0usize);
        let mut out = String::new();
        for pos in 0..len {
            let component = self.mixture.sample(rng);
            let w = match component {
                0 => self.unigram.sample(rng),
                1 => self.successors[prev1][self.successor_weights.sample(rng)],
                _ => {
                    debug_assert_eq!(self.order, 3);
                    self.trigram_successor(prev2, prev1, rng)
                }
            };
            if pos > 0 {
                out.push(' ');
            }
            out.push_str(&self.words[w]);
            prev2 = prev1;
            prev1 = w + 1;
        }
        out
    }

    pub fn sample(&self, num_sentences: usize, seed: u64) -> Vec<String> {
        let mut rng = rng_from(derive_seed(seed, "source-sample", 0));
        (0..num_sentences).map(|_| self.sample_sentence(&mut rng)).collect()
    }
}

/// Samples `num_sentences` sentences from a freshly generated source.
pub fn synthesize_corpus(
    source_order: usize,
    vocab_size: usize,
    num_sentences: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let source = SyntheticSource::new(source_order, vocab_size, seed)?;
    Ok(source.sample(num_sentences, seed))
}
