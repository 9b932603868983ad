use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One auxiliary task with known transfer accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtceRecord {
    pub wd: f64,
    pub nce: f64,
    pub accuracy: f64,
}

/// `accuracy ~ b0 + b1 * wd + b2 * nce`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtceModel {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    /// Root-mean-square training residual.
    pub residual_rms: f64,
}

const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares over at least three records.
pub fn otce_fit(records: &[OtceRecord]) -> Result<OtceModel> {
    if records.len() < 3 {
        return Err(Error::Fit(format!(
            "{} auxiliary tasks given; at least 3 are needed",
            records.len()
        )));
    }
    if let Some(r) = records
        .iter()
        .find(|r| !(r.wd.is_finite() && r.nce.is_finite() && r.accuracy.is_finite()))
    {
        return Err(Error::Fit(format!("non-finite auxiliary record {r:?}")));
    }
    let n = records.len();
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => records[i].wd,
        _ => records[i].nce,
    });
    let y = DVector::from_iterator(n, records.iter().map(|r| r.accuracy));
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0 && smin > RANK_TOL * smax) {
        return Err(Error::Fit(
            "auxiliary tasks are rank deficient; add more tasks with varied domain and task differences"
                .into(),
        ));
    }
    let b = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Fit(format!("least squares failed: {e}")))?;
    let resid = &y - &x * &b;
    Ok(OtceModel {
        b0: b[0],
        b1: b[1],
        b2: b[2],
        residual_rms: (resid.norm_squared() / n as f64).sqrt(),
    })
}

pub fn otce_predict(model: &OtceModel, wd: f64, nce: f64) -> f64 {
    model.b0 + model.b1 * wd + model.b2 * nce
}
