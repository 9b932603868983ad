use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::probe::{linear_probe_accuracy, ProbeResult, SourceModel};
use super::synth::{synth_generate, SyntheticSpec, ZooTarget};
use super::{cmp_records, CorrelationReport, TransferRecord};
use crate::data::{load_bundle, save_bundle, SourcePredictions, TaskDataset};
use crate::error::{Error, Result};
use crate::metrics::{h_score, leep_score, nce_score, Metric, PairScorer, ScoreConfig};

pub const PAIRS_FILE: &str = "pairs.csv";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const CORRELATION_JSON: &str = "correlation.json";
pub const CORRELATION_CSV: &str = "correlation.csv";

/// All requested scores for one pair. `preds` are source-model predictions
/// on the target samples, needed by NCE and LEEP. The OT-based scores run on
/// the configured subsample; the baselines use the full target.
pub fn score_pair(
    src: &TaskDataset,
    tgt: &TaskDataset,
    preds: Option<&SourcePredictions>,
    metrics: &[Metric],
    cfg: &ScoreConfig,
) -> Result<BTreeMap<Metric, f64>> {
    let mut scores = BTreeMap::new();
    let needs_ot = metrics
        .iter()
        .any(|m| matches!(m, Metric::JcNce | Metric::OtNce | Metric::Wd));
    let mut scorer = if needs_ot { Some(PairScorer::new(src, tgt, cfg)?) } else { None };
    let mut sample_reports = None;
    for &m in metrics {
        let score = match m {
            Metric::JcNce => scorer.as_mut().expect("built").jc_nce(cfg.lambda)?.score,
            Metric::OtNce | Metric::Wd => {
                if sample_reports.is_none() {
                    sample_reports = Some(sample_scores(scorer.as_ref().expect("built"))?);
                }
                let (nce, wd) = sample_reports.expect("set");
                if m == Metric::OtNce {
                    nce
                } else {
                    wd
                }
            }
            Metric::Nce | Metric::Leep => {
                let p = preds.ok_or_else(|| {
                    Error::Argument(format!("metric {m} needs source predictions on the target"))
                })?;
                if m == Metric::Nce {
                    nce_score(&p.argmax_labels(), tgt.labels(), p.num_classes(), tgt.num_classes())?.score
                } else {
                    leep_score(p, tgt.labels(), tgt.num_classes())?.score
                }
            }
            Metric::HScore => h_score(tgt)?.score,
        };
        scores.insert(m, score);
    }
    Ok(scores)
}

fn sample_scores(scorer: &PairScorer) -> Result<(f64, f64)> {
    let coupling = scorer.sample_coupling()?;
    let jld = crate::metrics::joint_label_distribution(
        coupling.plan(),
        scorer.source().labels(),
        scorer.target().labels(),
        scorer.source().num_classes(),
        scorer.target().num_classes(),
    )?;
    Ok((crate::metrics::negative_conditional_entropy(&jld), coupling.total_cost()))
}

/// One row of a pairs manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    /// Bundle paths as written in the manifest.
    pub source: String,
    pub target: String,
    pub source_path: PathBuf,
    pub target_path: PathBuf,
    pub accuracy: f64,
    pub log_likelihood: Option<f64>,
    pub group: String,
}

/// Reads a CSV manifest with columns `source`, `target`, `accuracy` and
/// optionally `log_likelihood` and `group` (default: the target path).
/// Bundle paths are relative to the manifest's directory.
pub fn read_pairs_manifest(path: impl AsRef<Path>) -> Result<Vec<PairEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(cs), Some(ct)) = (col("source"), col("target")) else {
        return Err(parse_err(1, "header must contain source and target columns".into()));
    };
    let (ca, cl, cg) = (col("accuracy"), col("log_likelihood"), col("group"));

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty());
        let source = field(Some(cs)).ok_or_else(|| parse_err(line, "empty source".into()))?;
        let target = field(Some(ct)).ok_or_else(|| parse_err(line, "empty target".into()))?;
        let number = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("{what} {s:?} is not a finite number")))
        };
        let accuracy = match field(ca) {
            Some(s) => number(s, "accuracy")?,
            None => {
                return Err(Error::Argument(format!(
                    "missing accuracy for pair ({source}, {target}) at line {line} of {}",
                    path.display()
                )))
            }
        };
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Validation(format!(
                "accuracy {accuracy} at line {line} of {} is outside [0, 1]",
                path.display()
            )));
        }
        let log_likelihood = field(cl).map(|s| number(s, "log_likelihood")).transpose()?;
        out.push(PairEntry {
            source: source.to_string(),
            target: target.to_string(),
            source_path: base.join(source),
            target_path: base.join(target),
            accuracy,
            log_likelihood,
            group: field(cg).unwrap_or(target).to_string(),
        });
    }
    Ok(out)
}

/// Loads and scores every pair (in parallel on the current rayon pool) and
/// returns records sorted by (source, target).
pub fn compare_pairs(
    entries: &[PairEntry],
    metrics: &[Metric],
    cfg: &ScoreConfig,
) -> Result<Vec<TransferRecord>> {
    cfg.validate()?;
    let mut records: Vec<TransferRecord> = entries
        .par_iter()
        .map(|e| {
            let (src, _) = load_bundle(&e.source_path)?;
            let (tgt, preds) = load_bundle(&e.target_path)?;
            if preds.is_none() {
                if let Some(m) = metrics.iter().find(|m| m.needs_predictions()) {
                    return Err(Error::Argument(format!(
                        "metric {m} needs predictions, but target bundle {} has no predictions file",
                        e.target_path.display()
                    )));
                }
            }
            let scores = score_pair(&src, &tgt, preds.as_ref(), metrics, cfg)?;
            Ok(TransferRecord {
                source: e.source.clone(),
                target: e.target.clone(),
                group: e.group.clone(),
                scores,
                transfer_accuracy: e.accuracy,
                log_likelihood: e.log_likelihood,
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by(cmp_records);
    Ok(records)
}

/// Writes `records.jsonl`, `correlation.json` and `correlation.csv`.
pub fn write_compare_outputs(
    dir: impl AsRef<Path>,
    records: &[TransferRecord],
    report: &CorrelationReport,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = String::new();
    for r in records {
        lines.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
        lines.push('\n');
    }
    write_text(&dir.join(RECORDS_FILE), &lines)?;
    let mut json = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    json.push('\n');
    write_text(&dir.join(CORRELATION_JSON), &json)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    w.write_record(["metric", "r", "p_value", "flagged", "top1", "top2", "top3", "n_pairs"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for m in &report.metrics {
        w.write_record([
            m.metric.to_string(),
            fmt(m.r),
            fmt(m.p_value),
            m.flagged.map(|f| f.to_string()).unwrap_or_default(),
            fmt(m.top1),
            fmt(m.top2),
            fmt(m.top3),
            report.n_pairs.to_string(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_text(&dir.join(CORRELATION_CSV), &String::from_utf8(bytes).expect("utf-8"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// A generated pair with its probe ground truth.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    /// Directory name of the pair.
    pub name: String,
    pub group: String,
    pub source: TaskDataset,
    pub target: TaskDataset,
    /// Source-model predictions on the target, before `f32` storage.
    pub predictions: SourcePredictions,
    pub probe: ProbeResult,
    pub source_train_log_likelihood: f64,
}

impl SuiteEntry {
    fn build(
        name: String,
        group: String,
        source: TaskDataset,
        target: TaskDataset,
        target_test: &TaskDataset,
    ) -> Result<Self> {
        let model = SourceModel::fit(&source)?;
        let predictions = model.predict(&target)?;
        let probe = linear_probe_accuracy(&source, &target, target_test)?;
        Ok(Self {
            name,
            group,
            source,
            target,
            predictions,
            probe,
            source_train_log_likelihood: model.train_log_likelihood(),
        })
    }

    pub fn source_id(&self) -> String {
        format!("{}/source", self.name)
    }

    pub fn target_id(&self) -> String {
        format!("{}/target", self.name)
    }
}

/// One entry per spec, named `pair-000`, `pair-001`, ...; each pair is its
/// own group.
pub fn build_suite_entries(specs: &[SyntheticSpec]) -> Result<Vec<SuiteEntry>> {
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let p = synth_generate(spec)?;
            let name = format!("pair-{i:03}");
            SuiteEntry::build(name.clone(), name, p.source, p.target, &p.target_test)
        })
        .collect()
}

/// One entry per (target, candidate), grouped by target.
pub fn build_zoo_entries(zoo: &[ZooTarget]) -> Result<Vec<SuiteEntry>> {
    let jobs: Vec<(usize, usize)> = zoo
        .iter()
        .enumerate()
        .flat_map(|(t, z)| (0..z.candidates.len()).map(move |c| (t, c)))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(t, c))| {
            let z = &zoo[t];
            SuiteEntry::build(
                format!("pair-{i:03}"),
                z.target.name().to_string(),
                z.candidates[c].clone(),
                z.target.clone(),
                &z.target_test,
            )
        })
        .collect()
}

/// Writes each pair as `<name>/source` and `<name>/target` bundles (the
/// target carrying the predictions) plus `pairs.csv`.
pub fn write_suite(dir: impl AsRef<Path>, entries: &[SuiteEntry]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "target", "accuracy", "log_likelihood", "group"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for e in entries {
        save_bundle(&e.source, None, dir.join(&e.name).join("source"))?;
        save_bundle(&e.target, Some(&e.predictions), dir.join(&e.name).join("target"))?;
        w.write_record([
            e.source_id(),
            e.target_id(),
            e.probe.accuracy.to_string(),
            e.probe.log_likelihood.to_string(),
            e.group.clone(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_text(&dir.join(PAIRS_FILE), &String::from_utf8(bytes).expect("utf-8"))
}

/// The records [`compare_pairs`] would produce from [`write_suite`]'s
/// output, computed without touching the disk.
pub fn records_in_process(
    entries: &[SuiteEntry],
    metrics: &[Metric],
    cfg: &ScoreConfig,
) -> Result<Vec<TransferRecord>> {
    cfg.validate()?;
    let mut records: Vec<TransferRecord> = entries
        .par_iter()
        .map(|e| {
            let preds = e.predictions.quantized_f32()?;
            let scores = score_pair(&e.source, &e.target, Some(&preds), metrics, cfg)?;
            Ok(TransferRecord {
                source: e.source_id(),
                target: e.target_id(),
                group: e.group.clone(),
                scores,
                transfer_accuracy: e.probe.accuracy,
                log_likelihood: Some(e.probe.log_likelihood),
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by(cmp_records);
    Ok(records)
}
