use std::path::Path;

use ndarray::Array2;

use super::TaskDataset;
use crate::error::{Error, Result};

/// Load a dataset from CSV with header `label,f0,f1,...`; `K = max(label) + 1`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TaskDataset> {
    let path = path.as_ref();
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            ::csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other:?}", path.display())),
        })?;

    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.get(0) != Some("label") {
        return Err(parse_err(1, "first column must be `label`".into()));
    }
    let d = header.len() - 1;
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{j}") {
            return Err(parse_err(1, format!("expected column f{j}, found {name:?}")));
        }
    }
    if d == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + 1 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", d + 1, record.len()),
            ));
        }
        let y: usize = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad label {:?}", &record[0])))?;
        labels.push(y);
        for cell in record.iter().skip(1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell {cell:?}")))?;
            flat.push(v);
        }
    }
    let n = labels.len();
    let features =
        Array2::from_shape_vec((n, d), flat).map_err(|e| Error::Format(e.to_string()))?;
    let k = labels.iter().max().map_or(1, |m| m + 1);
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    TaskDataset::new(name, features, labels, k)
}
