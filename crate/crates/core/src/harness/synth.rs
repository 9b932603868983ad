use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{Error, Result};

/// A Gaussian-blob source task and a shifted, label-noised target task.
///
/// The source has `num_source_classes` isotropic blobs with centroids drawn
/// from `N(0, sigma_between^2 I)` and spread `sigma_within`. Target samples
/// come from the same blobs translated by a random vector of length
/// `shift`. A target sample from blob `c` is labelled `c mod
/// num_target_classes`, except that with probability `rho` its label is
/// replaced by one drawn uniformly from all target classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub num_source_classes: usize,
    pub num_target_classes: usize,
    /// Samples per task.
    pub n: usize,
    /// Samples in the held-out target test set.
    pub n_test: usize,
    pub sigma_between: f64,
    pub sigma_within: f64,
    pub shift: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            num_source_classes: 4,
            num_target_classes: 4,
            n: 200,
            n_test: 200,
            sigma_between: 2.0,
            sigma_within: 1.0,
            shift: 0.0,
            rho: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.dim == 0 || self.num_source_classes == 0 || self.num_target_classes == 0 {
            return bad("dimension and class counts must be positive".into());
        }
        if self.num_target_classes > self.num_source_classes {
            return bad(format!(
                "target classes ({}) cannot exceed source classes ({})",
                self.num_target_classes, self.num_source_classes
            ));
        }
        if self.n < self.num_source_classes || self.n_test == 0 {
            return bad(format!(
                "n = {} must cover {} classes and n_test must be positive",
                self.n, self.num_source_classes
            ));
        }
        if !(self.sigma_within.is_finite() && self.sigma_within > 0.0) {
            return bad(format!("sigma_within must be > 0, got {}", self.sigma_within));
        }
        if !(self.sigma_between.is_finite() && self.sigma_between >= 0.0) {
            return bad(format!("sigma_between must be >= 0, got {}", self.sigma_between));
        }
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return bad(format!("shift must be >= 0, got {}", self.shift));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must be in [0, 1], got {}", self.rho));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub source: TaskDataset,
    pub target: TaskDataset,
    pub target_test: TaskDataset,
    /// Noise-free map from source class to target class.
    pub label_map: Vec<usize>,
    pub centroids: Array2<f64>,
    pub shift_vector: Array1<f64>,
}

const STREAM_LAYOUT: u64 = 0;
const STREAM_SOURCE: u64 = 1;
const STREAM_TARGET: u64 = 2;
const STREAM_TEST: u64 = 3;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Draws a pair. Features are rounded to `f32` so that bundles round-trip
/// exactly. For a fixed seed the samples and noise draws do not depend on
/// `rho`, so the noised label sets are nested as `rho` grows.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let (d, ks, kt) = (spec.dim, spec.num_source_classes, spec.num_target_classes);
    let mut rng = stream(spec.seed, STREAM_LAYOUT);
    let centroids = gaussian(&mut rng, ks, d, spec.sigma_between);
    let dir = gaussian(&mut rng, 1, d, 1.0).row(0).to_owned();
    let norm = dir.dot(&dir).sqrt();
    let shift_vector = if norm > 0.0 { dir * (spec.shift / norm) } else { Array1::zeros(d) };
    let label_map: Vec<usize> = (0..ks).map(|c| c % kt).collect();

    let zero = Array1::zeros(d);
    let source_labels: Vec<usize> = (0..spec.n).map(|i| i % ks).collect();
    let source = blob_task(
        &mut stream(spec.seed, STREAM_SOURCE),
        "source",
        &centroids,
        &zero,
        spec.sigma_within,
        source_labels,
        ks,
    )?;
    let target = noisy_target(spec, &centroids, &shift_vector, &label_map, spec.n, STREAM_TARGET, "target")?;
    let target_test =
        noisy_target(spec, &centroids, &shift_vector, &label_map, spec.n_test, STREAM_TEST, "target-test")?;
    Ok(SyntheticPair {
        source,
        target,
        target_test,
        label_map,
        centroids,
        shift_vector,
    })
}

fn noisy_target(
    spec: &SyntheticSpec,
    centroids: &Array2<f64>,
    shift: &Array1<f64>,
    label_map: &[usize],
    n: usize,
    s: u64,
    name: &str,
) -> Result<TaskDataset> {
    let (ks, kt) = (spec.num_source_classes, spec.num_target_classes);
    let mut rng = stream(spec.seed, s);
    let blobs: Vec<usize> = (0..n).map(|i| i % ks).collect();
    let mut ds = blob_task(&mut rng, name, centroids, shift, spec.sigma_within, blobs.clone(), ks)?;
    let labels: Vec<usize> = blobs
        .iter()
        .map(|&b| {
            let u: f64 = rng.random();
            let r = rng.random_range(0..kt);
            if u < spec.rho {
                r
            } else {
                label_map[b]
            }
        })
        .collect();
    ds = ds.with_labels(labels, kt)?;
    Ok(ds)
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Samples `centroids[label] + offset + sigma * N(0, I)` per label, rounded
/// to `f32`.
pub(crate) fn blob_task(
    rng: &mut ChaCha8Rng,
    name: &str,
    centroids: &Array2<f64>,
    offset: &Array1<f64>,
    sigma: f64,
    labels: Vec<usize>,
    num_classes: usize,
) -> Result<TaskDataset> {
    let d = centroids.ncols();
    let mut x = gaussian(rng, labels.len(), d, sigma);
    for (mut row, &c) in x.rows_mut().into_iter().zip(&labels) {
        row += &centroids.row(c);
        row += offset;
    }
    x.mapv_inplace(|v| v as f32 as f64);
    TaskDataset::new(name, x, labels, num_classes)
}

/// Pair specs with `rho` and `shift` drawn uniformly from `[0, rho_max]` and
/// `[0, shift_max]`, each with its own seed.
pub fn correlation_suite(
    base: &SyntheticSpec,
    num_pairs: usize,
    rho_max: f64,
    shift_max: f64,
    master_seed: u64,
) -> Result<Vec<SyntheticSpec>> {
    base.validate()?;
    if !(0.0..=1.0).contains(&rho_max) || !(shift_max.is_finite() && shift_max >= 0.0) {
        return Err(Error::Argument(format!(
            "rho_max must be in [0, 1] and shift_max >= 0, got {rho_max} and {shift_max}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    Ok((0..num_pairs)
        .map(|_| SyntheticSpec {
            rho: rho_max * rng.random::<f64>(),
            shift: shift_max * rng.random::<f64>(),
            seed: rng.random(),
            ..base.clone()
        })
        .collect())
}

/// Candidate sources of graded relatedness for a set of target tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooSpec {
    pub num_targets: usize,
    pub num_candidates: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub n: usize,
    pub n_test: usize,
    pub sigma_between: f64,
    pub sigma_within: f64,
    pub seed: u64,
}

impl Default for ZooSpec {
    fn default() -> Self {
        Self {
            num_targets: 7,
            num_candidates: 15,
            dim: 16,
            num_classes: 4,
            n: 200,
            n_test: 200,
            sigma_between: 0.8,
            sigma_within: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooTarget {
    pub target: TaskDataset,
    pub target_test: TaskDataset,
    pub candidates: Vec<TaskDataset>,
    /// Per candidate, the weight of its unrelated centroid component.
    pub mixing: Vec<f64>,
}

/// Targets with one blob per class; candidate `j` has centroids
/// `(1 - a_j) * T + a_j * R_j` for the target centroids `T`, fresh random
/// centroids `R_j` and `a_j` uniform in `[0, 1]`.
pub fn synth_zoo(spec: &ZooSpec) -> Result<Vec<ZooTarget>> {
    if spec.num_targets == 0 || spec.num_candidates == 0 || spec.num_classes == 0 || spec.dim == 0 {
        return Err(Error::Argument("zoo sizes must be positive".into()));
    }
    if spec.n < spec.num_classes || spec.n_test == 0 {
        return Err(Error::Argument("zoo tasks need at least one sample per class".into()));
    }
    if !(spec.sigma_within > 0.0 && spec.sigma_between >= 0.0) {
        return Err(Error::Argument("zoo spreads must be positive".into()));
    }
    let (k, d) = (spec.num_classes, spec.dim);
    let labels = |n: usize| -> Vec<usize> { (0..n).map(|i| i % k).collect() };
    let zero = Array1::zeros(d);
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.num_targets);
    for t in 0..spec.num_targets {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let centroids = gaussian(&mut rng, k, d, spec.sigma_between);
        let name = format!("target-{t:02}");
        let target = blob_task(&mut rng, &name, &centroids, &zero, spec.sigma_within, labels(spec.n), k)?;
        let target_test =
            blob_task(&mut rng, &name, &centroids, &zero, spec.sigma_within, labels(spec.n_test), k)?;
        let mut candidates = Vec::with_capacity(spec.num_candidates);
        let mut mixing = Vec::with_capacity(spec.num_candidates);
        for j in 0..spec.num_candidates {
            let a: f64 = rng.random();
            let other = gaussian(&mut rng, k, d, spec.sigma_between);
            let c = &centroids * (1.0 - a) + &other * a;
            let src = blob_task(
                &mut rng,
                &format!("source-{t:02}-{j:02}"),
                &c,
                &zero,
                spec.sigma_within,
                labels(spec.n),
                k,
            )?;
            candidates.push(src);
            mixing.push(a);
        }
        out.push(ZooTarget {
            target,
            target_test,
            candidates,
            mixing,
        });
    }
    Ok(out)
}
