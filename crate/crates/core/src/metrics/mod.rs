//! Transferability scores.
//!
//! [`jc_nce`] couples source and target samples by optimal transport under
//! the joint ground cost, sums the coupling into a joint distribution of
//! source and target labels, and reports the negative conditional entropy
//! `-H(Y_t | Y_s)` in nats. [`ot_nce`] does the same with the pure sample
//! cost. The baselines ([`nce_score`], [`leep_score`], [`h_score`]) and the
//! OTCE combiner live alongside.

mod baselines;
mod otce;

pub use baselines::{h_score, leep_score, nce_score};
pub use otce::{otce_fit, otce_predict, OtceModel, OtceRecord};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{subsample, TaskDataset};
use crate::error::{Error, Result};
use crate::label::{
    check_lambda, joint_cost_from, label_wasserstein_from_cost, LabelConfig, LabelDistanceMatrix,
};
use crate::ot::{
    pairwise_sq_euclidean, solve, CostMatrix, Coupling, MarginalWeights, SolverConfig, SolverInfo,
    SolverKind,
};

const MASS_TOL: f64 = 1e-6;
const JOINT_SUM_TOL: f64 = 1e-9;

/// `P(y_s, y_t)` as a `K_s x K_t` matrix, with its row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLabelDistribution {
    p: Array2<f64>,
    source_marginal: Array1<f64>,
}

impl JointLabelDistribution {
    pub fn new(p: Array2<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Argument("joint label distribution is empty".into()));
        }
        if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Argument(format!(
                "joint label probabilities must be finite and >= 0, found {v}"
            )));
        }
        let total = order_free_sum(p.iter().copied());
        if (total - 1.0).abs() > JOINT_SUM_TOL {
            return Err(Error::Argument(format!(
                "joint label probabilities sum to {total}, not 1"
            )));
        }
        let source_marginal = p.rows().into_iter().map(|r| order_free_sum(r.iter().copied())).collect();
        Ok(Self { p, source_marginal })
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn source_marginal(&self) -> &Array1<f64> {
        &self.source_marginal
    }

    pub fn target_classes(&self) -> usize {
        self.p.ncols()
    }
}

/// Sums a coupling over label blocks.
///
/// Negative round-off is clamped to zero; a total mass within `1e-6` of one
/// is renormalized, anything further is a coupling-integrity error.
pub fn joint_label_distribution(
    plan: &Array2<f64>,
    src_labels: &[usize],
    tgt_labels: &[usize],
    num_src_classes: usize,
    num_tgt_classes: usize,
) -> Result<JointLabelDistribution> {
    if plan.dim() != (src_labels.len(), tgt_labels.len()) {
        return Err(Error::Argument(format!(
            "coupling is {:?} but label vectors have lengths {} and {}",
            plan.dim(),
            src_labels.len(),
            tgt_labels.len()
        )));
    }
    check_labels(src_labels, num_src_classes, "source")?;
    check_labels(tgt_labels, num_tgt_classes, "target")?;
    if plan.iter().any(|v| !v.is_finite()) {
        return Err(Error::CouplingIntegrity(f64::NAN));
    }
    let mut p = Array2::<f64>::zeros((num_src_classes, num_tgt_classes));
    for (row, &a) in plan.rows().into_iter().zip(src_labels) {
        let mut prow = p.row_mut(a);
        for (&v, &b) in row.iter().zip(tgt_labels) {
            if v > 0.0 {
                prow[b] += v;
            }
        }
    }
    let total = order_free_sum(p.iter().copied());
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::CouplingIntegrity(total));
    }
    p /= total;
    JointLabelDistribution::new(p)
}

pub(crate) fn check_labels(labels: &[usize], k: usize, what: &str) -> Result<()> {
    if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(Error::Argument(format!(
            "{what} label {y} at index {i} is outside 0..{k}"
        )));
    }
    Ok(())
}

/// Sum taken in ascending order of the values.
pub(crate) fn order_free_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_unstable_by(f64::total_cmp);
    v.into_iter().sum()
}

/// `sum_ab p[a,b] ln(p[a,b] / P(a))`, with empty cells and empty rows
/// contributing zero.
pub fn negative_conditional_entropy(jld: &JointLabelDistribution) -> f64 {
    let mut terms = Vec::with_capacity(jld.p.len());
    for (row, &m) in jld.p.rows().into_iter().zip(&jld.source_marginal) {
        if m <= 0.0 {
            continue;
        }
        for &v in row {
            if v > 0.0 {
                terms.push(v * (v / m).ln());
            }
        }
    }
    let s = order_free_sum(terms);
    if s > 0.0 {
        0.0
    } else {
        s + 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "jc-nce")]
    JcNce,
    #[serde(rename = "ot-nce")]
    OtNce,
    #[serde(rename = "nce")]
    Nce,
    #[serde(rename = "leep")]
    Leep,
    #[serde(rename = "hscore")]
    HScore,
    #[serde(rename = "wd")]
    Wd,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::JcNce,
        Metric::OtNce,
        Metric::Nce,
        Metric::Leep,
        Metric::HScore,
        Metric::Wd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::JcNce => "jc-nce",
            Metric::OtNce => "ot-nce",
            Metric::Nce => "nce",
            Metric::Leep => "leep",
            Metric::HScore => "hscore",
            Metric::Wd => "wd",
        }
    }

    /// Whether the score needs source-model predictions on the target.
    pub fn needs_predictions(self) -> bool {
        matches!(self, Metric::Nce | Metric::Leep)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "unknown metric {s:?} (expected one of jc-nce, ot-nce, nce, leep, hscore, wd)"
                ))
            })
    }
}

/// One score with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub score: f64,
    pub lambda: Option<f64>,
    /// Relative Sinkhorn regularization, when Sinkhorn was used.
    pub epsilon: Option<f64>,
    pub solver: Option<SolverKind>,
    pub n_src: usize,
    pub n_tgt: usize,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub solver_info: Option<SolverInfo>,
}

impl MetricReport {
    pub(crate) fn plain(metric: Metric, score: f64, n_src: usize, n_tgt: usize, start: Instant) -> Self {
        Self {
            metric,
            score,
            lambda: None,
            epsilon: None,
            solver: None,
            n_src,
            n_tgt,
            seed: None,
            wall_time_s: start.elapsed().as_secs_f64(),
            solver_info: None,
        }
    }

    /// Single-line JSON.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub lambda: f64,
    /// Stratified subsample size per dataset; `None` keeps everything.
    pub subsample: Option<usize>,
    /// Seed of the dataset subsampling.
    pub seed: u64,
    pub solver: SolverConfig,
    pub label: LabelConfig,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            subsample: Some(1000),
            seed: 0,
            solver: SolverConfig::default(),
            label: LabelConfig::default(),
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        self.solver.validate()?;
        self.label.validate()?;
        if self.subsample == Some(0) {
            return Err(Error::Argument("subsample size must be positive".into()));
        }
        Ok(())
    }
}

/// A subsampled dataset pair with its sample cost, and the label distance
/// matrix once first needed. Reused across metrics and `lambda` values.
#[derive(Debug, Clone)]
pub struct PairScorer {
    src: TaskDataset,
    tgt: TaskDataset,
    sample_cost: CostMatrix,
    ldm: Option<LabelDistanceMatrix>,
    cfg: ScoreConfig,
}

impl PairScorer {
    pub fn new(src: &TaskDataset, tgt: &TaskDataset, cfg: &ScoreConfig) -> Result<Self> {
        cfg.validate()?;
        if src.dim() != tgt.dim() {
            return Err(Error::Argument(format!(
                "feature dimension mismatch: source {} vs target {}",
                src.dim(),
                tgt.dim()
            )));
        }
        let (src, tgt) = match cfg.subsample {
            Some(max_n) => (subsample(src, max_n, cfg.seed)?, subsample(tgt, max_n, cfg.seed)?),
            None => (src.clone(), tgt.clone()),
        };
        let sample_cost = pairwise_sq_euclidean(src.features().view(), tgt.features().view())?;
        Ok(Self {
            src,
            tgt,
            sample_cost,
            ldm: None,
            cfg: cfg.clone(),
        })
    }

    pub fn source(&self) -> &TaskDataset {
        &self.src
    }

    pub fn target(&self) -> &TaskDataset {
        &self.tgt
    }

    pub fn sample_cost(&self) -> &CostMatrix {
        &self.sample_cost
    }

    pub fn config(&self) -> &ScoreConfig {
        &self.cfg
    }

    /// Computed on first use.
    pub fn label_distances(&mut self) -> Result<&LabelDistanceMatrix> {
        if self.ldm.is_none() {
            let ldm = label_wasserstein_from_cost(&self.sample_cost, &self.src, &self.tgt, &self.cfg.label)?;
            self.ldm = Some(ldm);
        }
        Ok(self.ldm.as_ref().expect("just set"))
    }

    /// Optimal coupling under the joint ground cost.
    pub fn joint_coupling(&mut self, lambda: f64) -> Result<Coupling> {
        check_lambda(lambda)?;
        require_all_classes(&self.src, "source")?;
        require_all_classes(&self.tgt, "target")?;
        let w = MarginalWeights::uniform(self.src.len(), self.tgt.len());
        if lambda == 1.0 {
            return solve(&self.sample_cost, &w, &self.cfg.solver);
        }
        self.label_distances()?;
        let ldm = self.ldm.as_ref().expect("computed above");
        let cost = joint_cost_from(&self.sample_cost, self.src.labels(), self.tgt.labels(), lambda, ldm)?;
        solve(&cost, &w, &self.cfg.solver)
    }

    /// Optimal coupling under the sample cost alone.
    pub fn sample_coupling(&self) -> Result<Coupling> {
        let w = MarginalWeights::uniform(self.src.len(), self.tgt.len());
        solve(&self.sample_cost, &w, &self.cfg.solver)
    }

    pub fn jc_nce(&mut self, lambda: f64) -> Result<MetricReport> {
        let start = Instant::now();
        let coupling = self.joint_coupling(lambda)?;
        let score = self.coupling_nce(&coupling)?;
        Ok(self.ot_report(Metric::JcNce, score, Some(lambda), &coupling, start))
    }

    pub fn ot_nce(&self) -> Result<MetricReport> {
        let start = Instant::now();
        let coupling = self.sample_coupling()?;
        let score = self.coupling_nce(&coupling)?;
        Ok(self.ot_report(Metric::OtNce, score, None, &coupling, start))
    }

    pub fn wasserstein_distance(&self) -> Result<MetricReport> {
        let start = Instant::now();
        let coupling = self.sample_coupling()?;
        let score = coupling.total_cost();
        Ok(self.ot_report(Metric::Wd, score, None, &coupling, start))
    }

    fn coupling_nce(&self, coupling: &Coupling) -> Result<f64> {
        let jld = joint_label_distribution(
            coupling.plan(),
            self.src.labels(),
            self.tgt.labels(),
            self.src.num_classes(),
            self.tgt.num_classes(),
        )?;
        Ok(negative_conditional_entropy(&jld))
    }

    fn ot_report(
        &self,
        metric: Metric,
        score: f64,
        lambda: Option<f64>,
        coupling: &Coupling,
        start: Instant,
    ) -> MetricReport {
        let info = coupling.info().clone();
        MetricReport {
            metric,
            score,
            lambda,
            epsilon: (info.solver == SolverKind::Sinkhorn).then_some(self.cfg.solver.epsilon),
            solver: Some(info.solver),
            n_src: self.src.len(),
            n_tgt: self.tgt.len(),
            seed: Some(self.cfg.seed),
            wall_time_s: start.elapsed().as_secs_f64(),
            solver_info: Some(info),
        }
    }
}

fn require_all_classes(ds: &TaskDataset, what: &str) -> Result<()> {
    match ds.absent_classes().first() {
        Some(c) => Err(Error::Unsupported(format!(
            "{what} class {c} has no samples in {:?}; label distances are undefined",
            ds.name()
        ))),
        None => Ok(()),
    }
}

/// JC-NCE at `cfg.lambda`.
pub fn jc_nce(src: &TaskDataset, tgt: &TaskDataset, cfg: &ScoreConfig) -> Result<MetricReport> {
    let start = Instant::now();
    let mut report = PairScorer::new(src, tgt, cfg)?.jc_nce(cfg.lambda)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// NCE of the coupling under the pure sample cost.
pub fn ot_nce(src: &TaskDataset, tgt: &TaskDataset, cfg: &ScoreConfig) -> Result<MetricReport> {
    let start = Instant::now();
    let mut report = PairScorer::new(src, tgt, cfg)?.ot_nce()?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Transport cost between the two feature clouds under the sample cost.
pub fn wasserstein_domain_distance(
    src: &TaskDataset,
    tgt: &TaskDataset,
    cfg: &ScoreConfig,
) -> Result<MetricReport> {
    let start = Instant::now();
    let mut report = PairScorer::new(src, tgt, cfg)?.wasserstein_distance()?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
