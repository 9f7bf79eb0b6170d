//! Command-line front end: `gen`, `train-server`, `train-federated`, `eval`,
//! `compare` and `quantize`.
//!
//! Settings resolve as command-line flag, then `--config` file, then the
//! [`RunConfig`] default. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::central::train_centralized;
use crate::cifg::{checkpoint_bytes, load_model, quantize, save_checkpoint, save_quantized, CifgModel};
use crate::config::RunConfig;
use crate::corpus::{
    build_vocab, partition_clients, read_corpus, split, synthesize_corpus, tokenize_all, trainable, write_corpus,
    ClientShard, CorpusSplit, TokenSeq, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{compare_report, write_metrics_csv, NextWordPredictor};
use crate::fedavg::{federated_recall, run_federated};
use crate::ngram::{train_ngram, unigram_baseline, NgramTable};
use crate::nn::derive_seed;

#[derive(Parser, Debug)]
#[command(name = "fedlm", version, about = "Federated and centralized next-word language models")]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for client training and evaluation.
    #[arg(long, global = true, env = "FEDLM_THREADS")]
    threads: Option<usize>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any config key, e.g. `--set hidden=64`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus, one sentence per line.
    Gen(GenArgs),
    /// Centralized minibatch SGD.
    TrainServer(TrainArgs),
    /// Federated averaging over simulated clients.
    TrainFederated(TrainArgs),
    /// Recall of one checkpoint on a text file.
    Eval(EvalArgs),
    /// Recall of several models side by side.
    Compare(CompareArgs),
    /// Convert a checkpoint to 8-bit weights.
    Quantize(QuantizeArgs),
    /// Print the resolved configuration.
    Config,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Source n-gram order (2 or 3).
    #[arg(long)]
    order: Option<usize>,
    /// Distinct words in the source.
    #[arg(long)]
    source_vocab: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Metrics CSV output path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Sets both the minimum and the maximum clients per round.
    #[arg(long)]
    clients_per_round: Option<usize>,
    #[arg(long)]
    client_lr: Option<f64>,
    /// JSON-lines log of every federated round.
    #[arg(long)]
    round_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Sentences to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Recall cutoffs.
    #[arg(short, long, value_delimiter = ',', default_value = "1,3")]
    k: Vec<usize>,
    /// Evaluate per client and report a jackknife standard error.
    #[arg(long)]
    fed_eval: bool,
    #[arg(long)]
    eval_clients: Option<usize>,
    /// Write the report as CSV here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Checkpoint paths, `ngram` or `unigram`, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Training corpus for the n-gram baselines (its training split is used).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(short, long, value_delimiter = ',', default_value = "1,3")]
    k: Vec<usize>,
    /// Print an aligned table instead of CSV.
    #[arg(long)]
    text: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

/// Runs the binary: parses `std::env::args` and maps errors to exit codes.
pub fn main() -> ExitCode {
    let stdout = std::io::stdout();
    run(std::env::args_os(), &mut stdout.lock())
}

/// Parses `args` (including the program name) and executes the command,
/// writing reports to `out`. Diagnostics go to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli, out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    if let Some(n) = cli.threads {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Gen(args) => cmd_gen(&mut cfg, args, out),
        Command::TrainServer(args) => {
            apply_train_args(&mut cfg, args);
            cmd_train_server(&cfg, out)
        }
        Command::TrainFederated(args) => {
            apply_train_args(&mut cfg, args);
            cmd_train_federated(&cfg, out)
        }
        Command::Eval(args) => cmd_eval(&mut cfg, args, out),
        Command::Compare(args) => cmd_compare(&mut cfg, args, out),
        Command::Quantize(args) => cmd_quantize(&mut cfg, args, out),
        Command::Config => {
            out.write_all(cfg.to_text().as_bytes())?;
            Ok(())
        }
    }
}

fn set_opt<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_train_args(cfg: &mut RunConfig, a: TrainArgs) {
    set_opt(&mut cfg.corpus, a.corpus);
    set_opt(&mut cfg.vocab, a.vocab);
    set_opt(&mut cfg.checkpoint, a.output);
    set_opt(&mut cfg.metrics_out, a.metrics);
    set_opt(&mut cfg.max_steps, a.steps);
    set_opt(&mut cfg.lr, a.lr);
    set_opt(&mut cfg.batch_size, a.batch_size);
    set_opt(&mut cfg.eval_every, a.eval_every);
    set_opt(&mut cfg.clients, a.clients);
    set_opt(&mut cfg.rounds, a.rounds);
    set_opt(&mut cfg.client_lr, a.client_lr);
    set_opt(&mut cfg.round_log, a.round_log);
    if let Some(n) = a.clients_per_round {
        cfg.clients_per_round_min = n;
        cfg.clients_per_round_max = n;
    }
}

fn cmd_gen(cfg: &mut RunConfig, a: GenArgs, out: &mut dyn Write) -> Result<()> {
    set_opt(&mut cfg.sentences, a.sentences);
    set_opt(&mut cfg.corpus, a.output);
    set_opt(&mut cfg.source_order, a.order);
    set_opt(&mut cfg.source_vocab, a.source_vocab);
    let sentences = synthesize_corpus(cfg.source_order, cfg.source_vocab, cfg.sentences, cfg.seed)?;
    write_corpus(&cfg.corpus, &sentences)?;
    writeln!(out, "wrote {} sentences to {}", sentences.len(), cfg.corpus.display())?;
    Ok(())
}

/// Tokenized corpus split plus the vocabulary it was encoded with.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub data: CorpusSplit<TokenSeq>,
}

fn read_existing(path: &Path, what: &str) -> Result<Vec<String>> {
    if !path.exists() {
        return Err(Error::invalid(format!("{what} {} does not exist", path.display())));
    }
    read_corpus(path)
}

/// Reads the corpus, splits it with the configured fractions and seed, and
/// loads the vocabulary file or builds it from the training split and saves
/// it there.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let lines = read_existing(&cfg.corpus, "corpus")?;
    let parts = split(&lines, cfg.split_fractions(), derive_seed(cfg.seed, "split", 0))?;
    if parts.train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = if cfg.vocab.exists() {
        Vocabulary::load(&cfg.vocab)?
    } else {
        let v = build_vocab(&parts.train, cfg.vocab_size)?;
        v.save(&cfg.vocab)?;
        v
    };
    let enc = |s: &[String]| trainable(&tokenize_all(s, &vocab));
    let data = CorpusSplit {
        train: enc(&parts.train),
        test: enc(&parts.test),
        eval: enc(&parts.eval),
        seed: parts.seed,
    };
    if data.train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Prepared { vocab, data })
}

fn initial_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<CifgModel<f32>> {
    Ok(CifgModel::init(cfg.cifg_config(vocab.len())?, derive_seed(cfg.seed, "init", 0)))
}

fn eval_shards(cfg: &RunConfig, data: &[TokenSeq]) -> Result<Vec<ClientShard>> {
    let n = cfg.eval_clients.clamp(1, data.len().max(1));
    partition_clients(data, n, (data.len() / n).max(1), derive_seed(cfg.seed, "eval-clients", 0))
}

fn print_final(out: &mut dyn Write, rows: &[crate::eval::MetricsRow]) -> Result<()> {
    if let Some(r) = rows.last() {
        writeln!(
            out,
            "{} {}: loss {:.4} top1 {:.4} top3 {:.4}",
            r.phase.as_str(),
            r.step_or_round,
            r.loss,
            r.top1,
            r.top3
        )?;
    }
    Ok(())
}

fn cmd_train_server(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.central_config().validate()?;
    let Prepared { vocab, data } = prepare(cfg)?;
    let model = initial_model(cfg, &vocab)?;
    let (model, rows) = train_centralized(model, &data, &cfg.central_config())?;
    save_checkpoint(&model, &cfg.checkpoint)?;
    write_metrics_csv(&cfg.metrics_out, &rows)?;
    print_final(out, &rows)?;
    writeln!(out, "checkpoint {}", cfg.checkpoint.display())?;
    Ok(())
}

fn cmd_train_federated(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let fed = cfg.fed_config();
    fed.validate()?;
    let Prepared { vocab, data } = prepare(cfg)?;
    let clients = cfg.clients.max(1);
    let population = partition_clients(
        &data.train,
        clients,
        (data.train.len() / clients).max(1),
        derive_seed(cfg.seed, "clients", 0),
    )?;
    let eval_data = if data.eval.is_empty() { &data.train } else { &data.eval };
    let eval_population = eval_shards(cfg, eval_data)?;
    let model = initial_model(cfg, &vocab)?;
    let log = (!cfg.round_log.as_os_str().is_empty()).then_some(cfg.round_log.as_path());
    let (model, rows) = run_federated(model, &population, &eval_population, &fed, log)?;
    save_checkpoint(&model, &cfg.checkpoint)?;
    write_metrics_csv(&cfg.metrics_out, &rows)?;
    print_final(out, &rows)?;
    writeln!(out, "checkpoint {}", cfg.checkpoint.display())?;
    Ok(())
}

fn load_eval_data(path: &Path, vocab: &Vocabulary) -> Result<Vec<TokenSeq>> {
    let lines = read_existing(path, "data file")?;
    Ok(trainable(&tokenize_all(&lines, vocab)))
}

fn load_checked(path: &Path, vocab: &Vocabulary) -> Result<CifgModel<f32>> {
    if !path.exists() {
        return Err(Error::invalid(format!("checkpoint {} does not exist", path.display())));
    }
    let model = load_model(path)?;
    if model.config().vocab_size != vocab.len() {
        return Err(Error::ShapeMismatch {
            expected: vocab.len(),
            actual: model.config().vocab_size,
        });
    }
    Ok(model)
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("recall cutoffs must be >= 1".into()));
    }
    Ok(())
}

fn cmd_eval(cfg: &mut RunConfig, a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    set_opt(&mut cfg.checkpoint, a.checkpoint);
    set_opt(&mut cfg.vocab, a.vocab);
    set_opt(&mut cfg.eval_clients, a.eval_clients);
    check_ks(&a.k)?;
    let vocab = Vocabulary::load(&cfg.vocab)?;
    let model = load_checked(&cfg.checkpoint, &vocab)?;
    let data = load_eval_data(&a.data, &vocab)?;
    let name = cfg.checkpoint.display().to_string();
    let report = compare_report(&[(name.as_str(), &model as &dyn NextWordPredictor)], &data, &a.k)?;
    let mut text = report.to_text();
    if a.fed_eval {
        let shards = eval_shards(cfg, &data)?;
        let est = federated_recall(&model, &shards, &a.k)?;
        for (k, e) in a.k.iter().zip(&est) {
            let _ = writeln!(
                text,
                "federated top{k} over {} clients: {:.4} +/- {:.4}{}",
                shards.len(),
                e.value,
                e.stderr,
                if e.defined { "" } else { " (stderr undefined)" }
            );
        }
    }
    out.write_all(text.as_bytes())?;
    if let Some(path) = a.output {
        std::fs::write(path, report.to_csv())?;
    }
    Ok(())
}

fn baseline(cfg: &RunConfig, order: usize, vocab: &Vocabulary) -> Result<NgramTable> {
    let lines = read_existing(&cfg.corpus, "corpus")?;
    let parts = split(&lines, cfg.split_fractions(), derive_seed(cfg.seed, "split", 0))?;
    let train = trainable(&tokenize_all(&parts.train, vocab));
    if order == 1 {
        unigram_baseline(&train, vocab.len())
    } else {
        train_ngram(&train, order, cfg.ngram_discount, vocab.len())
    }
}

fn cmd_compare(cfg: &mut RunConfig, a: CompareArgs, out: &mut dyn Write) -> Result<()> {
    set_opt(&mut cfg.vocab, a.vocab);
    set_opt(&mut cfg.corpus, a.corpus);
    check_ks(&a.k)?;
    let vocab = Vocabulary::load(&cfg.vocab)?;
    let data = load_eval_data(&a.data, &vocab)?;
    let mut models: Vec<(String, Box<dyn NextWordPredictor>)> = Vec::new();
    for name in &a.models {
        let model: Box<dyn NextWordPredictor> = match name.as_str() {
            "ngram" => Box::new(baseline(cfg, cfg.ngram_order, &vocab)?),
            "unigram" => Box::new(baseline(cfg, 1, &vocab)?),
            path => Box::new(load_checked(Path::new(path), &vocab)?),
        };
        models.push((name.clone(), model));
    }
    let named: Vec<(&str, &dyn NextWordPredictor)> = models.iter().map(|(n, m)| (n.as_str(), m.as_ref())).collect();
    let report = compare_report(&named, &data, &a.k)?;
    let rendered = if a.text { report.to_text() } else { report.to_csv() };
    out.write_all(rendered.as_bytes())?;
    if let Some(path) = a.output {
        std::fs::write(path, report.to_csv())?;
    }
    Ok(())
}

fn cmd_quantize(cfg: &mut RunConfig, a: QuantizeArgs, out: &mut dyn Write) -> Result<()> {
    set_opt(&mut cfg.checkpoint, a.checkpoint);
    let model = load_model(&cfg.checkpoint)?;
    let q = quantize(&model);
    save_quantized(&q, &a.output)?;
    writeln!(
        out,
        "{} bytes -> {} bytes ({})",
        checkpoint_bytes(&model).len(),
        q.serialized_size(),
        a.output.display()
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names() {
        for cmd in ["gen", "train-server", "train-federated", "eval", "compare", "quantize"] {
            let mut args = vec!["fedlm", cmd];
            if matches!(cmd, "eval") {
                args.extend(["--data", "x"]);
            }
            if cmd == "compare" {
                args.extend(["--data", "x", "--models", "ngram"]);
            }
            if cmd == "quantize" {
                args.extend(["-o", "x"]);
            }
            assert!(Cli::try_parse_from(&args).is_ok(), "{cmd}");
        }
    }

    #[test]
    fn usage_errors_exit_one() {
        let mut sink = Vec::new();
        assert_eq!(run(["fedlm", "bogus"], &mut sink), ExitCode::from(1));
        assert_eq!(run(["fedlm", "--set", "nokey=1", "config"], &mut sink), ExitCode::from(1));
    }

    #[test]
    fn flag_overrides_config_default() {
        let cli = Cli::try_parse_from(["fedlm", "--seed", "9", "--set", "hidden=7", "config"]).unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.hidden), (9, 7));
    }
}
