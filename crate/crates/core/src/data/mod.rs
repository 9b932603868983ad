//! Labelled embedding datasets and source-model prediction tables.
//!
//! Everything here is validated at construction and immutable afterwards, so a
//! value of these types always satisfies its invariants.

mod bundle;
mod csv;

pub use bundle::{load_bundle, save_bundle, BundleFiles, BundleManifest};
pub use csv::load_csv;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row tolerance for probability tables held in memory.
pub const PROB_ROW_TOL: f64 = 1e-6;

/// `n` feature vectors of dimension `d` with class labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    name: String,
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl TaskDataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::Validation(format!(
                "dataset must have n >= 1 and d >= 1, got {n}x{d}"
            )));
        }
        if labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Validation("num_classes must be positive".into()));
        }
        if let Some((idx, v)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature {v} at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Validation(format!(
                "label {y} at index {i} is not below num_classes {num_classes}"
            )));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            num_classes,
        })
    }

    /// Build from row slices, inferring `K = max(label) + 1`.
    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Validation("ragged feature rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::Validation(e.to_string()))?;
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Self::new(name, features, labels.to_vec(), k)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Sample count per class, length `K`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Classes in `[0, K)` with no samples.
    pub fn absent_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn present_classes(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }

    /// Rows at `indices`, in the given order. Keeps `K` and the name.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Argument(format!(
                "row index {bad} out of range for dataset of {} rows",
                self.len()
            )));
        }
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(self.name.clone(), features, labels, self.num_classes)
    }

    /// Same samples, different labels (same `K` unless `num_classes` grows).
    pub fn with_labels(&self, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::new(self.name.clone(), self.features.clone(), labels, num_classes)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Source-head probabilities evaluated on target samples (`n x K_s`).
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePredictions {
    probs: Array2<f64>,
}

impl SourcePredictions {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        Self::validate(&probs, PROB_ROW_TOL)?;
        Ok(Self { probs })
    }

    fn validate(probs: &Array2<f64>, tol: f64) -> Result<()> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::Validation("empty prediction table".into()));
        }
        for (i, row) in probs.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Validation(format!(
                    "prediction row {i} has invalid entry {v}"
                )));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::Validation(format!(
                    "prediction row {i} sums to {s}, not 1"
                )));
            }
        }
        Ok(())
    }

    /// Accepts rows within `tol` of unit mass and rescales them to sum to 1.
    pub(crate) fn renormalized(mut probs: Array2<f64>, tol: f64) -> Result<Self> {
        Self::validate(&probs, tol)?;
        for mut row in probs.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        Ok(Self { probs })
    }

    /// Narrowed to `f32` and renormalized, exactly as a bundle round trip
    /// would return them.
    pub fn quantized_f32(&self) -> Result<Self> {
        Self::from_f32_widened(self.probs.mapv(|v| v as f32 as f64))
    }

    pub(crate) fn from_f32_widened(probs: Array2<f64>) -> Result<Self> {
        // f32 storage perturbs each row sum by up to ~K ulps.
        let tol = PROB_ROW_TOL + probs.ncols() as f64 * f32::EPSILON as f64;
        Self::renormalized(probs, tol)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Hard pseudo-labels; ties go to the lowest class index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Class-stratified subsample to at most `max_n` rows.
///
/// Per-class counts follow the largest-remainder apportionment of `max_n`
/// (so each is within one of the proportional share), every present class
/// keeps at least one sample, and the chosen rows keep their original order.
/// Returns the input unchanged when `n <= max_n`.
pub fn subsample(dataset: &TaskDataset, max_n: usize, seed: u64) -> Result<TaskDataset> {
    let n = dataset.len();
    if n <= max_n {
        return Ok(dataset.clone());
    }
    let counts = dataset.class_counts();
    let present = counts.iter().filter(|&&c| c > 0).count();
    if max_n < present {
        return Err(Error::Argument(format!(
            "max_n = {max_n} cannot keep one sample from each of {present} present classes"
        )));
    }
    let alloc = stratified_allocation(&counts, max_n);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        members[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(max_n);
    for (class_rows, &take) in members.iter().zip(&alloc) {
        if take == 0 {
            continue;
        }
        let picks = index::sample(&mut rng, class_rows.len(), take);
        chosen.extend(picks.iter().map(|p| class_rows[p]));
    }
    chosen.sort_unstable();
    dataset.select(&chosen)
}

fn stratified_allocation(counts: &[usize], max_n: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let quota: Vec<f64> = counts
        .iter()
        .map(|&c| max_n as f64 * c as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = quota
        .iter()
        .zip(counts)
        .map(|(&q, &c)| (q.floor() as usize).min(c))
        .collect();

    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quota[a] - quota[a].floor();
        let fb = quota[b] - quota[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = max_n - alloc.iter().sum::<usize>();
    while remaining > 0 {
        let mut progressed = false;
        for &k in &order {
            if remaining == 0 {
                break;
            }
            if alloc[k] < counts[k] {
                alloc[k] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    // Guarantee one sample per present class, borrowing from the class that
    // sits furthest above its quota.
    for k in 0..counts.len() {
        if counts[k] > 0 && alloc[k] == 0 {
            let donor = (0..counts.len())
                .filter(|&j| alloc[j] > 1)
                .max_by(|&a, &b| {
                    let ea = alloc[a] as f64 - quota[a];
                    let eb = alloc[b] as f64 - quota[b];
                    ea.total_cmp(&eb).then(b.cmp(&a))
                })
                .expect("max_n >= present classes leaves a donor");
            alloc[donor] -= 1;
            alloc[k] = 1;
        }
    }
    alloc
}
