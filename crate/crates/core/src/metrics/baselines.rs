use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Axis};

use super::{check_labels, negative_conditional_entropy, order_free_sum, JointLabelDistribution, Metric, MetricReport};
use crate::data::{SourcePredictions, TaskDataset};
use crate::error::{Error, Result};

/// Negative conditional entropy of target labels given hard source
/// pseudo-labels on the same samples.
pub fn nce_score(
    pseudo_labels: &[usize],
    tgt_labels: &[usize],
    num_src_classes: usize,
    num_tgt_classes: usize,
) -> Result<MetricReport> {
    let start = Instant::now();
    if pseudo_labels.len() != tgt_labels.len() {
        return Err(Error::Argument(format!(
            "{} pseudo-labels for {} target labels",
            pseudo_labels.len(),
            tgt_labels.len()
        )));
    }
    if tgt_labels.is_empty() {
        return Err(Error::Argument("no samples".into()));
    }
    check_labels(pseudo_labels, num_src_classes, "pseudo")?;
    check_labels(tgt_labels, num_tgt_classes, "target")?;
    let n = tgt_labels.len();
    let mut counts = Array2::<f64>::zeros((num_src_classes, num_tgt_classes));
    for (&z, &y) in pseudo_labels.iter().zip(tgt_labels) {
        counts[[z, y]] += 1.0;
    }
    let jld = JointLabelDistribution::new(counts / n as f64)?;
    let score = negative_conditional_entropy(&jld);
    Ok(MetricReport::plain(Metric::Nce, score, n, n, start))
}

/// Log expected empirical prediction.
///
/// With `theta` the source predictions, `P(y | z)` is estimated from the
/// soft co-occurrences `sum_i theta[i, z] [y_i = y]`, and the score is the
/// mean over samples of `ln sum_z P(y_i | z) theta[i, z]`.
pub fn leep_score(
    preds: &SourcePredictions,
    tgt_labels: &[usize],
    num_tgt_classes: usize,
) -> Result<MetricReport> {
    let start = Instant::now();
    let theta = preds.probs();
    if theta.nrows() != tgt_labels.len() {
        return Err(Error::Argument(format!(
            "{} prediction rows for {} target labels",
            theta.nrows(),
            tgt_labels.len()
        )));
    }
    check_labels(tgt_labels, num_tgt_classes, "target")?;
    let (n, kz) = theta.dim();
    let mut joint = Array2::<f64>::zeros((kz, num_tgt_classes));
    for (row, &y) in theta.rows().into_iter().zip(tgt_labels) {
        for (z, &t) in row.iter().enumerate() {
            joint[[z, y]] += t;
        }
    }
    let mass: Vec<f64> = joint.rows().into_iter().map(|r| order_free_sum(r.iter().copied())).collect();
    for (mut row, &m) in joint.rows_mut().into_iter().zip(&mass) {
        if m > 0.0 {
            row /= m;
        }
    }
    let mut total = 0.0;
    for (row, &y) in theta.rows().into_iter().zip(tgt_labels) {
        let eep: f64 = row
            .iter()
            .enumerate()
            .filter(|&(z, _)| mass[z] > 0.0)
            .map(|(z, &t)| joint[[z, y]] * t)
            .sum();
        total += eep.ln();
    }
    let score = (total / n as f64).min(0.0);
    Ok(MetricReport::plain(Metric::Leep, score, n, n, start))
}

/// `trace((cov(f) + gamma I)^+ cov(E[f | y]))` with the ridge
/// `gamma = 1e-8 trace(cov(f)) / d`.
///
/// The inner covariance weights each class mean by its class mass. A
/// dataset whose class means all coincide (for example a single class)
/// scores zero.
pub fn h_score(dataset: &TaskDataset) -> Result<MetricReport> {
    let start = Instant::now();
    let x = dataset.features();
    let (n, d) = x.dim();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;

    let counts = dataset.class_counts();
    let mut class_means = Array2::<f64>::zeros((counts.len(), d));
    for (row, &y) in centered.rows().into_iter().zip(dataset.labels()) {
        let mut m = class_means.row_mut(y);
        m += &row;
    }
    let mut deltas = Vec::new();
    for (c, mut m) in class_means.rows_mut().into_iter().enumerate() {
        if counts[c] > 0 {
            m /= counts[c] as f64;
            deltas.push((counts[c] as f64 / n as f64, DVector::from_iterator(d, m.iter().copied())));
        }
    }
    if deltas.iter().all(|(_, v)| v.iter().all(|&e| e == 0.0)) {
        log::warn!("h-score: class-conditional means coincide, inter-class covariance is zero");
        return Ok(MetricReport::plain(Metric::HScore, 0.0, n, n, start));
    }

    let cov = centered.t().dot(&centered) / n as f64;
    let gamma = 1e-8 * cov.diag().sum() / d as f64;
    let mut a = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    for i in 0..d {
        a[(i, i)] += gamma;
    }

    let score = match a.clone().cholesky() {
        Some(chol) => deltas
            .iter()
            .map(|(w, v)| w * v.dot(&chol.solve(v)))
            .sum::<f64>(),
        None => {
            let eig = a.symmetric_eigen();
            let top = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
            let cutoff = top * d as f64 * f64::EPSILON;
            deltas
                .iter()
                .map(|(w, v)| {
                    let proj = eig.eigenvectors.tr_mul(v);
                    let s: f64 = proj
                        .iter()
                        .zip(eig.eigenvalues.iter())
                        .filter(|&(_, &l)| l > cutoff)
                        .map(|(p, l)| p * p / l)
                        .sum();
                    w * s
                })
                .sum()
        }
    };
    if !score.is_finite() {
        return Err(Error::Numerical(format!("h-score is not finite ({score})")));
    }
    Ok(MetricReport::plain(Metric::HScore, score, n, n, start))
}
