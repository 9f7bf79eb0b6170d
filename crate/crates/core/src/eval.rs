//! Recall metrics, metric time series and model comparison reports.
//!
//! Recall counts every position whose target is a word (in-vocabulary or
//! UNK). UNK targets are automatic misses because UNK is never offered as a
//! candidate. EOS targets are left out of both numerator and denominator.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{is_special, TokenId, TokenSeq, EOS, UNK};
use crate::error::{Error, Result};

/// Anything that can rank next-word candidates for a context.
pub trait NextWordPredictor {
    /// Top-`k` non-special candidates after `context`, best first.
    fn predict_topk(&self, context: &[TokenId], k: usize) -> Result<Vec<(TokenId, f64)>>;

    /// Top-`k` lists for every prediction position of `seq`. Entry `t`
    /// predicts token `t + 1` from tokens `0..=t`.
    fn predict_positions(&self, seq: &TokenSeq, k: usize) -> Result<Vec<Vec<(TokenId, f64)>>> {
        let ids = seq.ids();
        (1..ids.len())
            .map(|t| self.predict_topk(&ids[..t], k))
            .collect()
    }
}

impl<P: NextWordPredictor + ?Sized> NextWordPredictor for &P {
    fn predict_topk(&self, context: &[TokenId], k: usize) -> Result<Vec<(TokenId, f64)>> {
        (**self).predict_topk(context, k)
    }

    fn predict_positions(&self, seq: &TokenSeq, k: usize) -> Result<Vec<Vec<(TokenId, f64)>>> {
        (**self).predict_positions(seq, k)
    }
}

/// Best `k` of `(id, score)` pairs with specials removed: higher score
/// first, lower id on ties. NaN scores are skipped.
pub fn top_k_candidates<I>(scores: I, k: usize) -> Vec<(TokenId, f64)>
where
    I: IntoIterator<Item = (TokenId, f64)>,
{
    let mut best: Vec<(TokenId, f64)> = Vec::with_capacity(k + 1);
    if k == 0 {
        return best;
    }
    for (id, s) in scores {
        if is_special(id) || s.is_nan() {
            continue;
        }
        if best.len() == k {
            let (wid, ws) = best[k - 1];
            if !(s > ws || (s == ws && id < wid)) {
                continue;
            }
        }
        let pos = best
            .iter()
            .position(|&(bid, bs)| s > bs || (s == bs && id < bid))
            .unwrap_or(best.len());
        best.insert(pos, (id, s));
        best.truncate(k);
    }
    best
}

/// Raw recall tallies for several cutoffs at once.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecallCounts {
    pub ks: Vec<usize>,
    pub hits: Vec<u64>,
    pub positions: u64,
}

impl RecallCounts {
    pub fn recall(&self, k: usize) -> Result<f64> {
        if self.positions == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let idx = self
            .ks
            .iter()
            .position(|&x| x == k)
            .ok_or_else(|| Error::invalid(format!("recall@{k} was not tallied")))?;
        Ok(self.hits[idx] as f64 / self.positions as f64)
    }
}

pub fn recall_counts<P: NextWordPredictor + ?Sized>(
    predictor: &P,
    data: &[TokenSeq],
    ks: &[usize],
) -> Result<RecallCounts> {
    let kmax = ks.iter().copied().max().unwrap_or(0);
    if kmax == 0 || ks.contains(&0) {
        return Err(Error::invalid("recall cutoffs must be >= 1"));
    }
    let mut counts = RecallCounts {
        ks: ks.to_vec(),
        hits: vec![0; ks.len()],
        positions: 0,
    };
    for seq in data {
        let predictions = predictor.predict_positions(seq, kmax)?;
        for (cands, &target) in predictions.iter().zip(&seq.ids()[1..]) {
            if let Some(&(id, _)) = cands.iter().find(|(id, _)| is_special(*id)) {
                return Err(Error::SpecialCandidate(id));
            }
            if target == EOS {
                continue;
            }
            counts.positions += 1;
            if target == UNK {
                continue;
            }
            if let Some(rank) = cands.iter().position(|&(id, _)| id == target) {
                for (hit, &k) in counts.hits.iter_mut().zip(ks) {
                    if rank < k {
                        *hit += 1;
                    }
                }
            }
        }
    }
    Ok(counts)
}

/// Fraction of word positions whose target is among the top `k` candidates.
pub fn recall_topk<P: NextWordPredictor + ?Sized>(
    predictor: &P,
    data: &[TokenSeq],
    k: usize,
) -> Result<f64> {
    recall_counts(predictor, data, &[k])?.recall(k)
}

/// Leave-one-group-out jackknife of the pooled ratio `sum(hits) / sum(positions)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JackknifeEstimate {
    pub value: f64,
    pub stderr: f64,
    /// False when there are fewer than two groups; `stderr` is then 0.
    pub defined: bool,
}

pub fn jackknife_ratio(hits: &[u64], positions: &[u64]) -> Result<JackknifeEstimate> {
    assert_eq!(hits.len(), positions.len());
    let total_hits: u64 = hits.iter().sum();
    let total_pos: u64 = positions.iter().sum();
    if total_pos == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let value = total_hits as f64 / total_pos as f64;
    let n = hits.len();
    if n < 2 {
        return Ok(JackknifeEstimate {
            value,
            stderr: 0.0,
            defined: false,
        });
    }
    let loo: Vec<f64> = hits
        .iter()
        .zip(positions)
        .map(|(&h, &p)| {
            let rest = total_pos - p;
            if rest == 0 {
                value
            } else {
                (total_hits - h) as f64 / rest as f64
            }
        })
        .collect();
    // Shifted by the first value so identical clients give exactly zero.
    let dev: Vec<f64> = loo.iter().map(|v| v - loo[0]).collect();
    let mean = dev.iter().sum::<f64>() / n as f64;
    let ss: f64 = dev.iter().map(|d| (d - mean) * (d - mean)).sum();
    Ok(JackknifeEstimate {
        value,
        stderr: ((n - 1) as f64 / n as f64 * ss).sqrt(),
        defined: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Central,
    Federated,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Central => "central",
            Phase::Federated => "federated",
        }
    }
}

/// One point of a training curve.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub phase: Phase,
    pub step_or_round: u64,
    pub examples_seen: u64,
    pub loss: f64,
    pub top1: f64,
    pub top3: f64,
    pub top1_stderr: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "phase,step_or_round,examples_seen,loss,top1,top3,top1_stderr,wall_ms";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.phase.as_str(),
            r.step_or_round,
            r.examples_seen,
            r.loss,
            r.top1,
            r.top3,
            r.top1_stderr,
            r.wall_ms
        );
    }
    s
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub recall: Vec<f64>,
}

/// Recall of several models on the same data, in the order given.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub ks: Vec<usize>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model");
        for k in &self.ks {
            let _ = write!(s, ",top{k}");
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.model);
            for r in &row.recall {
                let _ = write!(s, ",{r:.6}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .chain(std::iter::once(5))
            .max()
            .unwrap_or(5);
        let mut s = format!("{:<width$}", "Model");
        for k in &self.ks {
            let _ = write!(s, "  {:>12}", format!("Top-{k} recall"));
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{:<width$}", row.model);
            for r in &row.recall {
                let _ = write!(s, "  {:>11.2}%", 100.0 * r);
            }
            s.push('\n');
        }
        s
    }
}

pub fn compare_report(
    models: &[(&str, &dyn NextWordPredictor)],
    data: &[TokenSeq],
    ks: &[usize],
) -> Result<Report> {
    if models.is_empty() {
        return Err(Error::invalid("compare needs at least one model"));
    }
    let mut rows = Vec::with_capacity(models.len());
    for (name, model) in models {
        let counts = recall_counts(*model, data, ks)?;
        let recall = ks.iter().map(|&k| counts.recall(k)).collect::<Result<_>>()?;
        rows.push(ReportRow {
            model: name.to_string(),
            recall,
        });
    }
    Ok(Report {
        ks: ks.to_vec(),
        rows,
    })
}
