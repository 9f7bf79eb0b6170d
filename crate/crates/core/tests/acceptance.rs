//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fails.
//!
//! `cargo test --release --test acceptance`; the end-to-end check dominates
//! the runtime (a few minutes on one core).

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedlm::central::{train_centralized, CentralConfig, CentralTrainer};
use fedlm::cifg::{dequantize, quantize, quantized_from_bytes, CellState};
use fedlm::corpus::{
    build_vocab, is_special, partition_clients, synthesize_corpus, tokenize_all, trainable, ClientShard, CorpusSplit,
    TokenId, TokenSeq,
};
use fedlm::eval::{metrics_csv, recall_counts, MetricsRow, NextWordPredictor};
use fedlm::fedavg::{
    aggregate, aggregation_weights, federated_recall, run_federated, server_update, ClientUpdate, FedConfig,
    FederatedTrainer, ServerState,
};
use fedlm::ngram::{oracle_predict, predict_topk_ngram, train_ngram, unigram_baseline, NgramTable};
use fedlm::nn::finite_diff_grad;
use fedlm::{CifgConfig, CifgModel};

type Check = anyhow::Result<String>;

struct Report {
    failures: usize,
}

impl Report {
    fn run(&mut self, id: u32, name: &str, check: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(anyhow::anyhow!("panic: {:?}", p.downcast_ref::<String>())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name} ({secs:.1}s): {detail}"),
            Err(e) => {
                self.failures += 1;
                println!("FAIL {id:>2} {name} ({secs:.1}s): {e:#}");
            }
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn gradient_oracle() -> Check {
    let start = Instant::now();
    let config = CifgConfig::new(20, 4, 6)?;
    let model = CifgModel::<f64>::init(config, 17);
    let batch = vec![
        TokenSeq::from_words(&[3, 7, 12, 5], 20)?,
        TokenSeq::from_words(&[9, 3, 2, 18], 20)?,
        TokenSeq::from_words(&[19, 4, 4, 8, 15, 11], 20)?,
    ];
    let (_, grads) = model.loss_and_grads(&batch)?;
    let analytic = grads.to_flat();
    let numeric = finite_diff_grad(
        |p| CifgModel::from_flat(config, p).and_then(|m| m.mean_loss(&batch)).unwrap(),
        &model.to_flat(),
        1e-5,
    );
    let mut offset = 0;
    let mut worst_overall: f64 = 0.0;
    for (name, t) in CifgModel::<f64>::tensor_names().iter().zip(model.tensors()) {
        let range = offset..offset + t.len();
        let worst = range.clone().map(|j| rel_err(analytic[j], numeric[j])).fold(0.0, f64::max);
        ensure!(worst < 1e-4, "{name}: max relative error {worst:.3e}");
        ensure!(range.clone().any(|j| analytic[j] != 0.0), "{name}: gradient is identically zero");
        worst_overall = worst_overall.max(worst);
        offset = range.end;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!("11 groups, max relative error {worst_overall:.2e}"))
}

fn gate_coupling() -> Check {
    fn run<T: fedlm::nn::Real>(rng: &mut ChaCha8Rng, calls: usize) -> anyhow::Result<f64> {
        let config = CifgConfig::new(30, 6, 9)?;
        let mut worst: f64 = 0.0;
        for call in 0..calls {
            let model = CifgModel::<T>::init(config, call as u64 / 50);
            let mut rand_vec = |n: usize, s: f64| -> Vec<T> { (0..n).map(|_| T::from_f64(rng.random_range(-s..s))).collect() };
            let x = rand_vec(6, 4.0);
            let prev = CellState {
                c: rand_vec(9, 3.0),
                r: rand_vec(6, 2.0),
                ..CellState::zeros(&config)
            };
            let st = model.cell_step(&x, &prev)?;
            for (&i, &f) in st.i.iter().zip(&st.f) {
                worst = worst.max((f + i - T::one()).abs().as_f64());
            }
        }
        Ok(worst)
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w32 = run::<f32>(&mut rng, 500)?;
    let w64 = run::<f64>(&mut rng, 500)?;
    ensure!(w32 == 0.0 && w64 == 0.0, "max |f + i - 1|: f32 {w32:e}, f64 {w64:e}");
    Ok("1000 random cell steps (500 f32, 500 f64), max |f + i - 1| = 0".into())
}

fn parameter_count() -> Check {
    let cfg = CifgConfig::PAPER;
    let total = cfg.param_count();
    ensure!(total == 1_412_250, "param_count = {total}");
    let embedding = cfg.vocab_size * cfg.embed_dim;
    ensure!(embedding == 960_000, "embedding = {embedding}");
    ensure!(3 * embedding > 2 * total, "embedding share {embedding}/{total} is not above 2/3");
    let model = CifgModel::<f32>::zeros(cfg);
    ensure!(model.to_flat().len() == total, "flattened model has {} values", model.to_flat().len());
    Ok(format!("{total} parameters, embedding share {:.4}", embedding as f64 / total as f64))
}

fn quantized_size() -> Check {
    let start = Instant::now();
    let model = CifgModel::<f32>::init(CifgConfig::PAPER, 1);
    let q = quantize(&model);
    let bytes = q.to_bytes();
    let mb = bytes.len() as f64 / 1e6;
    ensure!((1.35..=1.55).contains(&mb), "{} bytes = {mb:.4} MB", bytes.len());
    ensure!(&bytes[..4] == b"FKLQ", "bad magic");
    let back = quantized_from_bytes(&bytes)?;
    ensure!(back == q, "quantized checkpoint does not round-trip");
    let restored: CifgModel<f32> = dequantize(&back);
    ensure!(restored.config() == model.config(), "config changed");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("{} bytes = {mb:.3} MB", bytes.len()))
}

/// Sentences from a small bigram source and the vocabulary size.
fn small_corpus(n: usize, seed: u64) -> anyhow::Result<(Vec<TokenSeq>, usize)> {
    let text = synthesize_corpus(2, 25, n, seed)?;
    let vocab = build_vocab(&text, 30)?;
    Ok((trainable(&tokenize_all(&text, &vocab)), vocab.len()))
}

/// Single client holding everything, one full-batch local step, plain
/// server averaging. Returns the max weight gap and both metric files.
fn degenerate_equivalence() -> anyhow::Result<(f64, String, String)> {
    let (data, v) = small_corpus(40, 5)?;
    let config = CifgConfig::new(v, 5, 7)?;
    let init = CifgModel::<f64>::init(config, 9);
    let lr = 0.4;
    let population = vec![ClientShard::new(0, data.clone())?];
    let fed_cfg = FedConfig {
        clients_per_round_min: 1,
        clients_per_round_max: 1,
        client_lr: lr,
        client_batch_size: data.len(),
        client_epochs: 1,
        total_rounds: 20,
        eligibility_prob: 1.0,
        server_lr: 1.0,
        server_momentum: 0.0,
        eval_every: 1,
        seed: 3,
        ..FedConfig::default()
    };
    let central_cfg = CentralConfig {
        lr,
        batch_size: data.len(),
        max_steps: 20,
        eval_every: 1,
        seed: 3,
        ..CentralConfig::default()
    };
    let mut fed = FederatedTrainer::new(init.clone(), &population, fed_cfg.clone())?;
    let mut central = CentralTrainer::new(init.clone(), data.clone(), central_cfg.clone())?;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        fed.round()?;
        central.step()?;
        for (a, b) in fed.model().to_flat().iter().zip(central.model().to_flat()) {
            worst = worst.max((a - b).abs());
        }
    }
    let split = CorpusSplit {
        train: data.clone(),
        test: vec![],
        eval: data,
        seed: 0,
    };
    let (_, central_rows) = train_centralized(init.clone(), &split, &central_cfg)?;
    let (_, fed_rows) = run_federated(init, &population, &population, &fed_cfg, None)?;
    Ok((worst, metrics_csv(&central_rows), metrics_csv(&fed_rows)))
}

fn fedavg_equivalence() -> Check {
    let (worst, _, _) = degenerate_equivalence()?;
    ensure!(worst < 1e-12, "max |w_fed - w_central| = {worst:e}");
    Ok(format!("20 rounds, max |w_fed - w_central| = {worst:.1e}"))
}

fn aggregation_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_sum: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for trial in 0..200 {
        let k = rng.random_range(1..40);
        let len = rng.random_range(1..30);
        let updates: Vec<ClientUpdate<f64>> = (0..k)
            .map(|id| ClientUpdate {
                client_id: (k - id) as u32,
                weights: (0..len).map(|_| rng.random_range(-5.0..5.0)).collect(),
                n_k: rng.random_range(1..5000),
                local_loss: 0.0,
            })
            .collect();
        let sum: f64 = aggregation_weights(&updates).iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());

        let same: Vec<_> = updates
            .iter()
            .map(|u| ClientUpdate {
                weights: updates[0].weights.clone(),
                ..u.clone()
            })
            .collect();
        ensure!(aggregate(&same)? == updates[0].weights, "trial {trial}: identical updates are not a fixed point");

        let c = rng.random_range(2..50);
        let scaled: Vec<_> = updates.iter().map(|u| ClientUpdate { n_k: u.n_k * c, ..u.clone() }).collect();
        for (a, b) in aggregate(&updates)?.iter().zip(aggregate(&scaled)?) {
            worst_scale = worst_scale.max((a - b).abs());
        }
    }
    ensure!(worst_sum < 1e-12, "weights sum off by {worst_sum:e}");
    ensure!(worst_scale < 1e-12, "rescaling changed the aggregate by {worst_scale:e}");
    Ok(format!(
        "200 random cohorts: |sum w - 1| <= {worst_sum:.1e}, fixed point exact, rescaling gap {worst_scale:.1e}"
    ))
}

fn nesterov_recurrence() -> Check {
    let config = CifgConfig::new(8, 2, 3)?;
    let mut state = ServerState::new(CifgModel::<f64>::init(config, 4), 1.0, 0.9)?;
    let g = 1e-3;
    let mut worst: f64 = 0.0;
    let mut first = Vec::new();
    for t in 1..=20 {
        let before = state.global.to_flat();
        let averaged: Vec<f64> = before.iter().map(|w| w - g).collect();
        state = server_update(&state, &averaged)?;
        let expected = (1.0 - 0.9f64.powi(t + 1)) / (1.0 - 0.9);
        for (b, a) in before.iter().zip(state.global.to_flat()) {
            worst = worst.max(((b - a) - expected * g).abs());
        }
        if t <= 2 {
            first.push((before[0] - state.global.to_flat()[0]) / g);
        }
    }
    ensure!(worst < 1e-12, "max deviation from closed form {worst:e}");
    ensure!((first[0] - 1.9).abs() < 1e-9 && (first[1] - 2.71).abs() < 1e-9, "first steps {first:?}");
    Ok(format!("20 rounds, steps {:.4}, {:.4}, ... x g, max deviation {worst:.1e}", first[0], first[1]))
}

/// Every context the oracle should agree on: all sentence prefixes, all
/// suffixes of those, and a few unseen ones.
fn contexts(corpus: &[TokenSeq], v: usize) -> BTreeSet<Vec<TokenId>> {
    let mut out = BTreeSet::new();
    for s in corpus {
        for t in 1..s.len() {
            for start in 0..t {
                out.insert(s.ids()[start..t].to_vec());
            }
        }
    }
    out.insert(vec![]);
    for w in 3..v as TokenId {
        out.insert(vec![w, w]);
        out.insert(vec![0, w, 2]);
    }
    out
}

fn ngram_oracle() -> Check {
    let (corpus, v) = small_corpus(20, 12)?;
    ensure!(corpus.len() == 20, "corpus has {} sentences", corpus.len());
    let mut compared = 0;
    let mut worst_norm: f64 = 0.0;
    for order in 1..=3 {
        let table = train_ngram(&corpus, order, 0.75, v)?;
        ensure!(table.is_suffix_closed(), "order {order}: table not suffix-closed");
        for ctx in contexts(&corpus, v) {
            let fast: Vec<TokenId> = predict_topk_ngram(&table, &ctx, v).into_iter().map(|(id, _)| id).collect();
            let slow = oracle_predict(&corpus, v, order, 0.75, &ctx, v);
            ensure!(fast == slow, "order {order}, context {ctx:?}: {fast:?} vs {slow:?}");
            let dist = table.distribution(&ctx);
            ensure!(dist.iter().all(|&p| p >= 0.0), "negative probability");
            worst_norm = worst_norm.max((dist.iter().sum::<f64>() - 1.0).abs());
            compared += 1;
        }
    }
    ensure!(worst_norm < 1e-9, "distribution sums off by {worst_norm:e}");
    Ok(format!("{compared} (order, context) pairs identical, |sum p - 1| <= {worst_norm:.1e}"))
}

struct EndToEnd {
    vocab_size: usize,
    train: Vec<TokenSeq>,
    eval: Vec<TokenSeq>,
    central: CifgModel<f32>,
    federated: CifgModel<f32>,
    central_rows: Vec<MetricsRow>,
    fed_rows: Vec<MetricsRow>,
}

const E2E_SEED: u64 = 2024;

fn end_to_end_run() -> anyhow::Result<EndToEnd> {
    let text = synthesize_corpus(3, 500, 55_000, E2E_SEED)?;
    let vocab = build_vocab(&text[..50_000], 500)?;
    let train = trainable(&tokenize_all(&text[..50_000], &vocab));
    let eval = trainable(&tokenize_all(&text[50_000..], &vocab));
    let v = vocab.len();
    let config = CifgConfig::new(v, 16, 32)?;

    let split = CorpusSplit {
        train: train.clone(),
        test: vec![],
        eval: eval.clone(),
        seed: E2E_SEED,
    };
    let central_cfg = CentralConfig {
        lr: 0.5,
        batch_size: 50,
        max_steps: 20_000,
        eval_every: 2_000,
        seed: E2E_SEED,
        clip_norm: Some(5.0),
        record_wall_time: false,
    };
    let (central, central_rows) = train_centralized(CifgModel::init(config, E2E_SEED), &split, &central_cfg)?;

    let population = partition_clients(&train, 50, train.len() / 50, E2E_SEED)?;
    let eval_population = partition_clients(&eval, 10, eval.len() / 10, E2E_SEED + 1)?;
    let fed_cfg = FedConfig {
        clients_per_round_min: 5,
        clients_per_round_max: 10,
        client_lr: 0.5,
        client_batch_size: 50,
        client_epochs: 1,
        total_rounds: 300,
        eligibility_prob: 0.8,
        server_lr: 1.0,
        server_momentum: 0.9,
        eval_every: 30,
        seed: E2E_SEED,
        clip_norm: Some(5.0),
        record_wall_time: false,
    };
    let (federated, fed_rows) = run_federated(CifgModel::init(config, E2E_SEED), &population, &eval_population, &fed_cfg, None)?;
    Ok(EndToEnd {
        vocab_size: v,
        train,
        eval,
        central,
        federated,
        central_rows,
        fed_rows,
    })
}

fn end_to_end(run: &anyhow::Result<EndToEnd>, secs: f64) -> Check {
    let e = run.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?;
    let unigram = unigram_baseline(&e.train, e.vocab_size)?;
    let uni = recall_counts(&unigram, &e.eval, &[1, 3])?;
    let cen = recall_counts(&e.central, &e.eval, &[1, 3])?;
    let fed = recall_counts(&e.federated, &e.eval, &[1, 3])?;
    let (u1, c1, f1) = (uni.recall(1)?, cen.recall(1)?, fed.recall(1)?);
    ensure!(c1 >= u1 + 0.05, "central top1 {c1:.4} vs unigram {u1:.4}");
    ensure!(f1 >= u1 + 0.05, "federated top1 {f1:.4} vs unigram {u1:.4}");
    for (name, r) in [("unigram", &uni), ("central", &cen), ("federated", &fed)] {
        ensure!(r.recall(3)? >= r.recall(1)?, "{name}: top3 < top1");
    }
    for row in e.central_rows.iter().chain(&e.fed_rows) {
        ensure!(row.top3 >= row.top1, "metrics row {row:?}: top3 < top1");
    }
    ensure!(secs < 30.0 * 60.0, "took {secs:.0}s");
    Ok(format!(
        "top1 unigram {u1:.4}, central {c1:.4} (+{:.1} pts), federated {f1:.4} (+{:.1} pts)",
        100.0 * (c1 - u1),
        100.0 * (f1 - u1)
    ))
}

/// Wraps a predictor and asserts on every candidate list it hands out.
struct MaskAudit<'a> {
    inner: &'a dyn NextWordPredictor,
    lists: std::cell::Cell<u64>,
}

impl NextWordPredictor for MaskAudit<'_> {
    fn predict_topk(&self, context: &[TokenId], k: usize) -> fedlm::Result<Vec<(TokenId, f64)>> {
        let out = self.inner.predict_topk(context, k)?;
        assert!(out.iter().all(|(id, _)| !is_special(*id)), "special candidate after {context:?}");
        self.lists.set(self.lists.get() + 1);
        Ok(out)
    }

    fn predict_positions(&self, seq: &TokenSeq, k: usize) -> fedlm::Result<Vec<Vec<(TokenId, f64)>>> {
        let out = self.inner.predict_positions(seq, k)?;
        for list in &out {
            assert!(list.iter().all(|(id, _)| !is_special(*id)), "special candidate in {seq:?}");
        }
        self.lists.set(self.lists.get() + out.len() as u64);
        Ok(out)
    }
}

fn masking(run: &anyhow::Result<EndToEnd>) -> Check {
    let e = run.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?;
    let v = e.vocab_size;
    let unigram = unigram_baseline(&e.train, v)?;
    let trigram = train_ngram(&e.train, 3, 0.75, v)?;
    let quantized: CifgModel<f32> = dequantize(&quantize(&e.central));
    let random = CifgModel::<f32>::init(CifgConfig::new(v, 16, 32)?, 77);
    let models: [(&str, &dyn NextWordPredictor); 6] = [
        ("central", &e.central),
        ("federated", &e.federated),
        ("quantized", &quantized),
        ("random", &random),
        ("unigram", &unigram),
        ("trigram", &trigram),
    ];
    let mut lists = 0;
    let full = v - 3;
    for (name, model) in models {
        let audit = MaskAudit {
            inner: model,
            lists: Default::default(),
        };
        recall_counts(&audit, &e.eval, &[1, 3])?;
        // every candidate the model can offer, on a slice of the data
        for seq in &e.eval[..200] {
            for list in audit.predict_positions(seq, full)? {
                let is_cifg = !matches!(name, "unigram" | "trigram");
                ensure!(!is_cifg || list.len() == full, "{name}: {} of {full} candidates", list.len());
            }
        }
        lists += audit.lists.get();
    }
    let shards = partition_clients(&e.eval, 10, e.eval.len() / 10, 1)?;
    federated_recall(&e.federated, &shards, &[1, 3])?;
    Ok(format!("{lists} candidate lists from 6 models, none contain <s>, </s> or <unk>"))
}

fn determinism(first: &anyhow::Result<EndToEnd>) -> Check {
    let (_, c1, f1) = degenerate_equivalence()?;
    let (_, c2, f2) = degenerate_equivalence()?;
    ensure!(c1 == c2 && f1 == f2, "degenerate-equivalence metrics differ between runs");
    let a = first.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?;
    let b = end_to_end_run()?;
    ensure!(
        metrics_csv(&a.central_rows) == metrics_csv(&b.central_rows),
        "central metrics differ between runs"
    );
    ensure!(metrics_csv(&a.fed_rows) == metrics_csv(&b.fed_rows), "federated metrics differ between runs");
    Ok(format!(
        "4 metric files identical on rerun ({} bytes total)",
        c1.len() + f1.len() + metrics_csv(&a.central_rows).len() + metrics_csv(&a.fed_rows).len()
    ))
}

fn jackknife(table: &NgramTable, pool: &[TokenSeq]) -> Check {
    let copies: Vec<ClientShard> = (0..8).map(|i| ClientShard::new(i, pool[..40].to_vec()).unwrap()).collect();
    let same = federated_recall(table, &copies, &[1])?[0];
    ensure!(same.stderr == 0.0 && same.defined, "identical shards: stderr {}", same.stderr);

    let mut shrinks = 0;
    for seed in 0..10u64 {
        let shards = partition_clients(pool, 160, 20, 100 + seed)?;
        let small = federated_recall(table, &shards[..40], &[1])?[0];
        let large = federated_recall(table, &shards, &[1])?[0];
        if large.stderr < small.stderr {
            shrinks += 1;
        }
    }
    ensure!(shrinks >= 9, "stderr shrank in only {shrinks}/10 seeds");
    Ok(format!("identical shards give stderr 0; 40 -> 160 clients shrank stderr in {shrinks}/10 seeds"))
}

fn jackknife_check() -> Check {
    let text = synthesize_corpus(3, 200, 8_000, 31)?;
    let vocab = build_vocab(&text[..4_000], 200)?;
    let seqs = trainable(&tokenize_all(&text, &vocab));
    let table = train_ngram(&seqs[..4_000], 3, 0.75, vocab.len())?;
    jackknife(&table, &seqs[4_000..])
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    report.run(1, "gradient oracle", gradient_oracle);
    report.run(2, "gate coupling", gate_coupling);
    report.run(3, "parameter count", parameter_count);
    report.run(4, "quantized size", quantized_size);
    report.run(5, "fedavg degenerate equivalence", fedavg_equivalence);
    report.run(6, "aggregation algebra", aggregation_algebra);
    report.run(7, "nesterov recurrence", nesterov_recurrence);
    report.run(8, "n-gram oracle equivalence", ngram_oracle);

    let start = Instant::now();
    let e2e = end_to_end_run().context("end-to-end run");
    let secs = start.elapsed().as_secs_f64();
    report.run(9, "end-to-end ordering", || end_to_end(&e2e, secs));
    report.run(10, "special-token masking", || masking(&e2e));
    report.run(11, "determinism", || determinism(&e2e));
    report.run(12, "jackknife stderr", jackknife_check);

    if report.failures == 0 {
        println!("acceptance: all 12 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of 12 criteria failed", report.failures);
        ExitCode::FAILURE
    }
}
