//! Desk-scale evaluation: synthetic tasks, probe-trained ground truth,
//! correlation and Top-k model selection, lambda sweeps.

mod compare;
mod probe;
mod synth;

pub use compare::{
    build_suite_entries, build_zoo_entries, compare_pairs, read_pairs_manifest, records_in_process,
    score_pair, write_compare_outputs, write_suite, PairEntry, SuiteEntry, CORRELATION_CSV,
    CORRELATION_JSON, PAIRS_FILE, RECORDS_FILE,
};
pub use probe::{
    linear_probe_accuracy, ProbeResult, SoftmaxHead, SourceExtractor, SourceModel, PROBE_STEPS,
    PROBE_STEP_SIZE,
};
pub use synth::{
    correlation_suite, synth_generate, synth_zoo, SyntheticPair, SyntheticSpec, ZooSpec, ZooTarget,
};

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::label::check_lambda;
use crate::metrics::{Metric, MetricReport, PairScorer, ScoreConfig};

/// Scores and ground truth of one (source, target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub source: String,
    pub target: String,
    /// Candidates sharing a group compete in Top-k selection.
    pub group: String,
    pub scores: BTreeMap<Metric, f64>,
    pub transfer_accuracy: f64,
    /// Mean test log-likelihood of the probe, when known.
    pub log_likelihood: Option<f64>,
}

impl Metric {
    /// `false` for distances, where smaller predicts better transfer.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Wd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    /// `p_value > 0.001`.
    pub flagged: bool,
}

pub const P_FLAG: f64 = 0.001;

/// Pearson product-moment correlation with a two-sided p-value from the
/// t-distribution with `n - 2` degrees of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::Argument(format!("lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Argument(format!("correlation needs at least 3 points, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Argument("correlation inputs must be finite".into()));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Argument("undefined correlation: zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        2.0 * student_t(df).sf(t.abs())
    };
    Ok(Correlation {
        r,
        p_value,
        flagged: p_value > P_FLAG,
    })
}

fn student_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    /// One-sided, against `mean(a - b) <= 0`.
    pub p_greater: f64,
    pub p_two_sided: f64,
}

/// Paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Argument(format!(
            "paired test needs two equal samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    let t = if var > 0.0 {
        mean / (var / n).sqrt()
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    let dist = student_t(df);
    let p_greater = if t.is_infinite() {
        if t > 0.0 { 0.0 } else { 1.0 }
    } else {
        dist.sf(t)
    };
    let p_two_sided = if t.is_infinite() { 0.0 } else { 2.0 * dist.sf(t.abs()) };
    Ok(PairedTTest {
        mean_diff: mean,
        t,
        df,
        p_greater,
        p_two_sided,
    })
}

/// Fraction of groups whose best source (highest accuracy, then highest
/// probe log-likelihood, then lowest source id) is among the `k`
/// best-scored sources. Scores are ranked best first, ties going to the
/// lowest source id.
pub fn topk_selection_accuracy(records: &[TransferRecord], metric: Metric, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    let groups = group_records(records);
    if groups.is_empty() {
        return Err(Error::Argument("no records to rank".into()));
    }
    let mut hits = 0usize;
    for (name, members) in &groups {
        if members.len() < k {
            return Err(Error::Argument(format!(
                "group {name:?} has {} candidates, fewer than k = {k}",
                members.len()
            )));
        }
        let best = members
            .iter()
            .min_by(|a, b| {
                b.transfer_accuracy
                    .total_cmp(&a.transfer_accuracy)
                    .then(ll(b).total_cmp(&ll(a)))
                    .then(a.source.cmp(&b.source))
            })
            .expect("non-empty");
        let mut ranked = Vec::with_capacity(members.len());
        for r in members {
            let s = *r.scores.get(&metric).ok_or_else(|| {
                Error::Argument(format!("record ({}, {}) has no {metric} score", r.source, r.target))
            })?;
            ranked.push((if metric.higher_is_better() { s } else { -s }, r.source.as_str()));
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        if ranked[..k].iter().any(|(_, s)| *s == best.source) {
            hits += 1;
        }
    }
    Ok(hits as f64 / groups.len() as f64)
}

fn ll(r: &TransferRecord) -> f64 {
    r.log_likelihood.unwrap_or(f64::NEG_INFINITY)
}

fn group_records(records: &[TransferRecord]) -> BTreeMap<&str, Vec<&TransferRecord>> {
    let mut groups: BTreeMap<&str, Vec<&TransferRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.group.as_str()).or_default().push(r);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: Metric,
    /// Null when a score or the accuracy has zero variance.
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub flagged: Option<bool>,
    /// Null when some group has fewer than `k` candidates.
    pub top1: Option<f64>,
    pub top2: Option<f64>,
    pub top3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n_pairs: usize,
    pub n_groups: usize,
    pub metrics: Vec<MetricCorrelation>,
}

impl CorrelationReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricCorrelation> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

/// Pearson correlation with transfer accuracy and Top-1/2/3 selection, per
/// metric.
pub fn correlate(records: &[TransferRecord], metrics: &[Metric]) -> Result<CorrelationReport> {
    let acc: Vec<f64> = records.iter().map(|r| r.transfer_accuracy).collect();
    let mut out = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let scores: Vec<f64> = records
            .iter()
            .map(|r| {
                r.scores.get(&metric).copied().ok_or_else(|| {
                    Error::Argument(format!("record ({}, {}) has no {metric} score", r.source, r.target))
                })
            })
            .collect::<Result<_>>()?;
        let c = pearson(&scores, &acc).ok();
        let top = |k| topk_selection_accuracy(records, metric, k).ok();
        out.push(MetricCorrelation {
            metric,
            r: c.map(|c| c.r),
            p_value: c.map(|c| c.p_value),
            flagged: c.map(|c| c.flagged),
            top1: top(1),
            top2: top(2),
            top3: top(3),
        });
    }
    Ok(CorrelationReport {
        n_pairs: records.len(),
        n_groups: group_records(records).len(),
        metrics: out,
    })
}

/// JC-NCE at each `lambda` in `grid`, sharing the subsample, sample cost
/// and label distance matrix.
pub fn lambda_sweep(
    src: &TaskDataset,
    tgt: &TaskDataset,
    grid: &[f64],
    cfg: &ScoreConfig,
) -> Result<Vec<MetricReport>> {
    if grid.is_empty() {
        return Err(Error::Argument("lambda grid is empty".into()));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    let mut scorer = PairScorer::new(src, tgt, cfg)?;
    grid.iter().map(|&l| scorer.jc_nce(l)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundGap {
    /// `probe_train_ll - (source_train_ll + jc_nce)`.
    pub gap: f64,
    pub held: bool,
}

/// How far the probe's training log-likelihood sits above
/// `source_train_ll + jc_nce`. Reported, never enforced.
pub fn bound_diagnostic(source_train_ll: f64, jc_nce_score: f64, probe_train_ll: f64) -> BoundGap {
    let gap = probe_train_ll - (source_train_ll + jc_nce_score);
    BoundGap { gap, held: gap >= 0.0 }
}

pub(crate) fn cmp_records(a: &TransferRecord, b: &TransferRecord) -> Ordering {
    a.source.cmp(&b.source).then(a.target.cmp(&b.target))
}
