use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{SourcePredictions, TaskDataset};
use crate::error::{Error, Result};

pub const PROBE_STEPS: usize = 500;
pub const PROBE_STEP_SIZE: f64 = 0.1;

/// Multinomial logistic regression on standardized features, trained by
/// full-batch gradient descent from zero weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    mean: Array1<f64>,
    scale: Array1<f64>,
    w: Array2<f64>,
    b: Array1<f64>,
}

impl SoftmaxHead {
    pub fn fit(x: &Array2<f64>, labels: &[usize], num_classes: usize) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 || n != labels.len() {
            return Err(Error::Argument(format!(
                "probe needs matching non-empty data, got {n} rows and {} labels",
                labels.len()
            )));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x
            .var_axis(Axis(0), 0.0)
            .mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        let z = (x - &mean) / &scale;
        let mut onehot = Array2::<f64>::zeros((n, num_classes));
        for (i, &y) in labels.iter().enumerate() {
            onehot[[i, y]] = 1.0;
        }
        let mut head = Self {
            mean,
            scale,
            w: Array2::zeros((d, num_classes)),
            b: Array1::zeros(num_classes),
        };
        for _ in 0..PROBE_STEPS {
            let mut g = head.softmax_standardized(&z);
            g -= &onehot;
            g /= n as f64;
            let gw = z.t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            head.w.scaled_add(-PROBE_STEP_SIZE, &gw);
            head.b.scaled_add(-PROBE_STEP_SIZE, &gb);
        }
        if head.w.iter().chain(&head.b).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "probe training diverged; features are pathological".into(),
            ));
        }
        Ok(head)
    }

    fn softmax_standardized(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut logits = z.dot(&self.w) + &self.b;
        for mut row in logits.rows_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - mx).exp());
            let s = row.sum();
            row /= s;
        }
        logits
    }

    pub fn num_classes(&self) -> usize {
        self.b.len()
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        self.softmax_standardized(&((x - &self.mean) / &self.scale))
    }

    /// Accuracy (argmax, lowest index on ties) and mean log-likelihood.
    pub fn evaluate(&self, x: &Array2<f64>, labels: &[usize]) -> (f64, f64) {
        let p = self.predict_proba(x);
        let n = labels.len() as f64;
        let mut hits = 0usize;
        let mut ll = 0.0;
        for (row, &y) in p.rows().into_iter().zip(labels) {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            hits += usize::from(best == y);
            ll += row.get(y).copied().unwrap_or(0.0).max(f64::MIN_POSITIVE).ln();
        }
        (hits as f64 / n, ll / n)
    }
}

/// Frozen linear feature extractor standing in for a source model: the
/// projection onto the span of the source class-mean deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceExtractor {
    mean: Array1<f64>,
    basis: Array2<f64>,
}

impl SourceExtractor {
    pub fn fit(src: &TaskDataset) -> Self {
        let x = src.features();
        let d = x.ncols();
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let counts = src.class_counts();
        let mut sums = Array2::<f64>::zeros((counts.len(), d));
        for (row, &y) in x.rows().into_iter().zip(src.labels()) {
            let mut s = sums.row_mut(y);
            s += &(&row - &mean);
        }
        let present: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
        let m = DMatrix::from_fn(d, present.len(), |i, j| {
            sums[[present[j], i]] / counts[present[j]] as f64
        });
        let svd = m.svd(true, false);
        let u = svd.u.expect("requested");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| smax > 0.0 && svd.singular_values[k] > 1e-10 * smax)
            .collect();
        let basis = Array2::from_shape_fn((d, keep.len()), |(i, j)| u[(i, keep[j])]);
        Self { mean, basis }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean).dot(&self.basis)
    }
}

/// Outcome of training a head on the target task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// Mean test log-likelihood.
    pub log_likelihood: f64,
    pub train_accuracy: f64,
    pub train_log_likelihood: f64,
}

/// Transfer accuracy of `src` to the target task: the source extractor is
/// frozen, a softmax head is trained on `tgt_train` and scored on
/// `tgt_test`.
pub fn linear_probe_accuracy(
    src: &TaskDataset,
    tgt_train: &TaskDataset,
    tgt_test: &TaskDataset,
) -> Result<ProbeResult> {
    if src.dim() != tgt_train.dim() || tgt_train.dim() != tgt_test.dim() {
        return Err(Error::Argument(format!(
            "feature dimensions differ: source {}, train {}, test {}",
            src.dim(),
            tgt_train.dim(),
            tgt_test.dim()
        )));
    }
    if tgt_train.num_classes() != tgt_test.num_classes() {
        return Err(Error::Argument(format!(
            "train has {} classes but test has {}",
            tgt_train.num_classes(),
            tgt_test.num_classes()
        )));
    }
    let ext = SourceExtractor::fit(src);
    let train = ext.transform(tgt_train.features());
    let test = ext.transform(tgt_test.features());
    let head = SoftmaxHead::fit(&train, tgt_train.labels(), tgt_train.num_classes())?;
    let (accuracy, log_likelihood) = head.evaluate(&test, tgt_test.labels());
    let (train_accuracy, train_log_likelihood) = head.evaluate(&train, tgt_train.labels());
    Ok(ProbeResult {
        accuracy,
        log_likelihood,
        train_accuracy,
        train_log_likelihood,
    })
}

/// The source extractor with a head trained on the source task itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    extractor: SourceExtractor,
    head: SoftmaxHead,
    train_log_likelihood: f64,
}

impl SourceModel {
    pub fn fit(src: &TaskDataset) -> Result<Self> {
        let extractor = SourceExtractor::fit(src);
        let z = extractor.transform(src.features());
        let head = SoftmaxHead::fit(&z, src.labels(), src.num_classes())?;
        let (_, train_log_likelihood) = head.evaluate(&z, src.labels());
        Ok(Self {
            extractor,
            head,
            train_log_likelihood,
        })
    }

    pub fn train_log_likelihood(&self) -> f64 {
        self.train_log_likelihood
    }

    /// Class probabilities on `data`'s samples.
    pub fn predict(&self, data: &TaskDataset) -> Result<SourcePredictions> {
        let p = self.head.predict_proba(&self.extractor.transform(data.features()));
        SourcePredictions::new(p)
    }
}
