use ndarray::{Array2, ArrayView2};

use super::CostMatrix;
use crate::error::{Error, Result};

/// Squared Euclidean distance between two equal-length slices.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Independent lanes let the compiler vectorize the reduction.
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `C[i, j] = ||a_i - b_j||^2` for row sets `a` (`m x d`) and `b` (`n x d`).
///
/// Computed from coordinate differences rather than the Gram expansion, so
/// identical rows give exactly zero.
pub fn pairwise_sq_euclidean(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<CostMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Argument("empty point set".into()));
    }
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (m, n, d) = (a.nrows(), b.nrows(), a.ncols());
    let a_flat = a.as_slice().expect("standard layout");
    let b_flat = b.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ai = &a_flat[i * d..(i + 1) * d];
        for j in 0..n {
            out.push(sq_dist(ai, &b_flat[j * d..(j + 1) * d]).max(0.0));
        }
    }
    let values = Array2::from_shape_vec((m, n), out).expect("shape matches");
    CostMatrix::new(values)
}
