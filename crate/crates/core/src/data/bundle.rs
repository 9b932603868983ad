//! Directory bundles: `manifest.json` plus raw little-endian payloads.
//!
//! ```text
//! manifest.json   name, num_samples, dim, num_classes, dtype="f32", byte_order="little",
//!                 files.{features, labels[, predictions]}, [num_pred_classes]
//! features.bin    f32 LE, row-major, num_samples x dim
//! labels.bin      u32 LE, num_samples
//! preds.bin       f32 LE, row-major, num_samples x num_pred_classes (optional)
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{SourcePredictions, TaskDataset};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FEATURES_FILE: &str = "features.bin";
const LABELS_FILE: &str = "labels.bin";
const PREDS_FILE: &str = "preds.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleFiles {
    pub features: String,
    pub labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub name: String,
    pub num_samples: usize,
    pub dim: usize,
    pub num_classes: usize,
    /// Column count of the prediction table; defaults to `num_classes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_pred_classes: Option<usize>,
    pub dtype: String,
    pub byte_order: String,
    pub files: BundleFiles,
}

impl BundleManifest {
    fn pred_classes(&self) -> usize {
        self.num_pred_classes.unwrap_or(self.num_classes)
    }
}

fn read_checked(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.len() != expected {
        return Err(Error::ByteLength {
            path: path.to_path_buf(),
            expected,
            actual: meta.len(),
        });
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn f32_payload(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
}

/// Load a bundle directory, validating sizes and dataset invariants.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<(TaskDataset, Option<SourcePredictions>)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    if manifest.byte_order != "little" {
        return Err(Error::Format(format!(
            "unsupported byte_order {:?}",
            manifest.byte_order
        )));
    }
    let (n, d, k) = (manifest.num_samples, manifest.dim, manifest.num_classes);

    let feat_path = dir.join(&manifest.files.features);
    let feat_bytes = read_checked(&feat_path, (n * d * 4) as u64)?;
    let features = Array2::from_shape_vec((n, d), f32_payload(&feat_bytes).collect())
        .map_err(|e| Error::Format(e.to_string()))?;

    let label_path = dir.join(&manifest.files.labels);
    let label_bytes = read_checked(&label_path, (n * 4) as u64)?;
    let labels: Vec<usize> = label_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(Error::Validation(format!(
            "{}: label {y} at index {i} is not below num_classes {k}",
            label_path.display()
        )));
    }

    let dataset = TaskDataset::new(manifest.name.clone(), features, labels, k)?;

    let preds = match &manifest.files.predictions {
        None => None,
        Some(file) => {
            let kp = manifest.pred_classes();
            let pred_path = dir.join(file);
            let bytes = read_checked(&pred_path, (n * kp * 4) as u64)?;
            let probs = Array2::from_shape_vec((n, kp), f32_payload(&bytes).collect())
                .map_err(|e| Error::Format(e.to_string()))?;
            Some(SourcePredictions::from_f32_widened(probs)?)
        }
    };
    Ok((dataset, preds))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn f32_bytes(values: impl Iterator<Item = f64>, what: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for v in values {
        let x = v as f32;
        if !x.is_finite() {
            return Err(Error::Validation(format!("{what} value {v} does not fit in f32")));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Write `dataset` (and optional predictions) as a bundle directory.
pub fn save_bundle(
    dataset: &TaskDataset,
    preds: Option<&SourcePredictions>,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    if let Some(p) = preds {
        if p.len() != dataset.len() {
            return Err(Error::Argument(format!(
                "{} prediction rows for {} samples",
                p.len(),
                dataset.len()
            )));
        }
    }
    let feat = f32_bytes(dataset.features().iter().copied(), "feature")?;
    let pred = preds
        .map(|p| f32_bytes(p.probs().iter().copied(), "prediction"))
        .transpose()?;
    let mut labels = Vec::with_capacity(dataset.len() * 4);
    for &y in dataset.labels() {
        let y = u32::try_from(y).map_err(|_| Error::Validation(format!("label {y} exceeds u32")))?;
        labels.extend_from_slice(&y.to_le_bytes());
    }

    let manifest = BundleManifest {
        name: dataset.name().to_string(),
        num_samples: dataset.len(),
        dim: dataset.dim(),
        num_classes: dataset.num_classes(),
        num_pred_classes: preds.map(SourcePredictions::num_classes),
        dtype: "f32".into(),
        byte_order: "little".into(),
        files: BundleFiles {
            features: FEATURES_FILE.into(),
            labels: LABELS_FILE.into(),
            predictions: preds.map(|_| PREDS_FILE.into()),
        },
    };

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(FEATURES_FILE), &feat)?;
    write_file(&dir.join(LABELS_FILE), &labels)?;
    if let Some(bytes) = pred {
        write_file(&dir.join(PREDS_FILE), &bytes)?;
    }
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}
