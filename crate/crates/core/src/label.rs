//! Class-conditional measures, label-to-label OT distances and the joint
//! sample-plus-label ground cost.
//!
//! The label distance between source class `a` and target class `b` is the
//! optimal transport cost between the empirical measures of the two classes
//! (uniform weights) under the squared Euclidean ground cost. No square root
//! is taken unless [`LabelDistance::Sqrt`] is requested.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::ot::{pairwise_sq_euclidean, solve, CostMatrix, MarginalWeights, SolverConfig};

/// The samples of one class, weighted uniformly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMeasure {
    class_id: usize,
    indices: Vec<usize>,
}

impl ClassMeasure {
    pub fn class_id(&self) -> usize {
        self.class_id
    }

    /// Row indices into the owning dataset, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.len() as f64; self.len()]
    }
}

/// One measure per present class, in class order.
pub fn class_measures(dataset: &TaskDataset) -> Vec<ClassMeasure> {
    let mut members = vec![Vec::new(); dataset.num_classes()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        members[y].push(i);
    }
    members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(class_id, indices)| ClassMeasure { class_id, indices })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelDistance {
    /// OT cost under squared Euclidean ground cost.
    #[default]
    Squared,
    /// Square root of [`LabelDistance::Squared`].
    Sqrt,
}

impl std::str::FromStr for LabelDistance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Self::Squared),
            "sqrt" => Ok(Self::Sqrt),
            _ => Err(Error::Argument(format!(
                "unknown label distance {s:?} (expected squared or sqrt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Classes larger than this are uniformly subsampled before solving.
    pub class_cap: usize,
    /// Exact solver when both classes have at most this many samples.
    pub exact_max_class: usize,
    /// Relative Sinkhorn regularization for larger class pairs.
    pub sinkhorn_epsilon: f64,
    pub distance: LabelDistance,
    pub seed: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            class_cap: 500,
            exact_max_class: 300,
            sinkhorn_epsilon: 0.05,
            distance: LabelDistance::Squared,
            seed: 0,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_cap == 0 {
            return Err(Error::Argument("class_cap must be positive".into()));
        }
        if !(self.sinkhorn_epsilon.is_finite() && self.sinkhorn_epsilon > 0.0) {
            return Err(Error::Argument(format!(
                "label sinkhorn epsilon must be > 0, got {}",
                self.sinkhorn_epsilon
            )));
        }
        Ok(())
    }
}

/// `K_s x K_t` matrix of label distances.
///
/// Rows of absent source classes and columns of absent target classes hold
/// NaN, and the matrix is flagged; flagged matrices cannot build a ground
/// cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistanceMatrix {
    values: Array2<f64>,
    absent_source: Vec<usize>,
    absent_target: Vec<usize>,
}

impl LabelDistanceMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_flagged(&self) -> bool {
        !self.absent_source.is_empty() || !self.absent_target.is_empty()
    }

    pub fn absent_source(&self) -> &[usize] {
        &self.absent_source
    }

    pub fn absent_target(&self) -> &[usize] {
        &self.absent_target
    }

    /// CSV with a `source_class` column followed by one column per target
    /// class.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["source_class".to_string()];
        header.extend((0..self.values.ncols()).map(|b| format!("t{b}")));
        w.write_record(&header).map_err(csv_err)?;
        for (a, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = vec![a.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Label distance matrix between the classes of `src` and `tgt`.
pub fn label_wasserstein_matrix(
    src: &TaskDataset,
    tgt: &TaskDataset,
    cfg: &LabelConfig,
) -> Result<LabelDistanceMatrix> {
    check_dims(src, tgt)?;
    let sample_cost = pairwise_sq_euclidean(src.features().view(), tgt.features().view())?;
    label_wasserstein_from_cost(&sample_cost, src, tgt, cfg)
}

/// As [`label_wasserstein_matrix`], reading per-class costs as blocks of a
/// precomputed `src x tgt` squared-distance matrix.
pub fn label_wasserstein_from_cost(
    sample_cost: &CostMatrix,
    src: &TaskDataset,
    tgt: &TaskDataset,
    cfg: &LabelConfig,
) -> Result<LabelDistanceMatrix> {
    cfg.validate()?;
    if sample_cost.dim() != (src.len(), tgt.len()) {
        return Err(Error::Argument(format!(
            "sample cost is {:?} but datasets have {} and {} rows",
            sample_cost.dim(),
            src.len(),
            tgt.len()
        )));
    }
    let (ks, kt) = (src.num_classes(), tgt.num_classes());
    let src_members = capped_members(src, cfg);
    let tgt_members = capped_members(tgt, cfg);

    let pairs: Vec<(usize, usize)> = (0..ks)
        .flat_map(|a| (0..kt).map(move |b| (a, b)))
        .filter(|&(a, b)| !src_members[a].is_empty() && !tgt_members[b].is_empty())
        .collect();
    let exact = SolverConfig::exact();
    let entropic = SolverConfig::sinkhorn(cfg.sinkhorn_epsilon);
    let solved: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ia, ib) = (&src_members[a], &tgt_members[b]);
            let block = sample_cost.values().select(Axis(0), ia).select(Axis(1), ib);
            let block = CostMatrix::from_trusted(block);
            let w = MarginalWeights::uniform(ia.len(), ib.len());
            let solver = if ia.len() <= cfg.exact_max_class && ib.len() <= cfg.exact_max_class {
                &exact
            } else {
                &entropic
            };
            let d = solve(&block, &w, solver)?.total_cost().max(0.0);
            Ok(match cfg.distance {
                LabelDistance::Squared => d,
                LabelDistance::Sqrt => d.sqrt(),
            })
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::from_elem((ks, kt), f64::NAN);
    for (&(a, b), d) in pairs.iter().zip(solved) {
        values[[a, b]] = d;
    }
    Ok(LabelDistanceMatrix {
        values,
        absent_source: src.absent_classes(),
        absent_target: tgt.absent_classes(),
    })
}

/// Per-class row indices, uniformly subsampled to the cap. The draw depends
/// only on the seed, class and class size, so a dataset paired with itself
/// keeps the same rows on both sides.
fn capped_members(ds: &TaskDataset, cfg: &LabelConfig) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); ds.num_classes()];
    for (i, &y) in ds.labels().iter().enumerate() {
        members[y].push(i);
    }
    for (class, m) in members.iter_mut().enumerate() {
        if m.len() > cfg.class_cap {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(class as u64);
            let mut picks = index::sample(&mut rng, m.len(), cfg.class_cap).into_vec();
            picks.sort_unstable();
            *m = picks.into_iter().map(|p| m[p]).collect();
        }
    }
    members
}

fn check_dims(src: &TaskDataset, tgt: &TaskDataset) -> Result<()> {
    if src.dim() != tgt.dim() {
        return Err(Error::Argument(format!(
            "feature dimension mismatch: source {} vs target {}",
            src.dim(),
            tgt.dim()
        )));
    }
    Ok(())
}

/// `lambda * ||f_i - g_j||^2 + (1 - lambda) * ldm[y_i, y_j]`.
pub fn joint_ground_cost(
    src: &TaskDataset,
    tgt: &TaskDataset,
    lambda: f64,
    ldm: &LabelDistanceMatrix,
) -> Result<CostMatrix> {
    check_dims(src, tgt)?;
    let sample_cost = pairwise_sq_euclidean(src.features().view(), tgt.features().view())?;
    joint_cost_from(&sample_cost, src.labels(), tgt.labels(), lambda, ldm)
}

/// As [`joint_ground_cost`] from a precomputed squared-distance matrix.
pub fn joint_cost_from(
    sample_cost: &CostMatrix,
    src_labels: &[usize],
    tgt_labels: &[usize],
    lambda: f64,
    ldm: &LabelDistanceMatrix,
) -> Result<CostMatrix> {
    check_lambda(lambda)?;
    if ldm.is_flagged() {
        return Err(Error::Argument(format!(
            "label distance matrix is flagged: absent source classes {:?}, absent target classes {:?}",
            ldm.absent_source, ldm.absent_target
        )));
    }
    if sample_cost.dim() != (src_labels.len(), tgt_labels.len()) {
        return Err(Error::Argument(format!(
            "sample cost is {:?} but label vectors have lengths {} and {}",
            sample_cost.dim(),
            src_labels.len(),
            tgt_labels.len()
        )));
    }
    let (ks, kt) = ldm.dim();
    if let Some(y) = src_labels.iter().find(|&&y| y >= ks) {
        return Err(Error::Argument(format!("source label {y} outside label distance rows {ks}")));
    }
    if let Some(y) = tgt_labels.iter().find(|&&y| y >= kt) {
        return Err(Error::Argument(format!("target label {y} outside label distance columns {kt}")));
    }
    let l = &ldm.values;
    let mu = 1.0 - lambda;
    let mut out = sample_cost.values().to_owned();
    for (mut row, &ya) in out.rows_mut().into_iter().zip(src_labels) {
        for (v, &yb) in row.iter_mut().zip(tgt_labels) {
            *v = lambda * *v + mu * l[[ya, yb]];
        }
    }
    Ok(CostMatrix::from_trusted(out))
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!("lambda must be in [0, 1], got {lambda}")));
    }
    Ok(())
}
