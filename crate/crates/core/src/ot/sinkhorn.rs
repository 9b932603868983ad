use ndarray::Array2;

use super::{marginal_violation, CostMatrix, Coupling, MarginalWeights, SolverInfo, SolverKind};
use crate::error::{Error, Result};

/// Entropic OT by Sinkhorn iterations on dual potentials in the log domain.
///
/// Potentials are kept in units of `epsilon` (`f / eps`, `g / eps`), so the
/// updates are
///
/// ```text
/// f_i = log a_i - LSE_j(g_j - C_ij / eps)
/// g_j = log b_j - LSE_i(f_i - C_ij / eps)
/// ```
///
/// Columns are exact after every sweep; the loop stops once the row
/// marginals are within `tol` (checked for free from the next row update) or
/// after `max_iters` sweeps, in which case `converged` is false.
///
/// The final iterate is then rounded onto the transportation polytope
/// (Altschuler, Weed & Rigollet, 2017): rows and columns are scaled down to
/// their targets and the leftover mass is added as a rank-one correction. The
/// returned plan is feasible to round-off; `info().residual` keeps the
/// violation of the unrounded iterate.
pub fn solve_sinkhorn(
    cost: &CostMatrix,
    w: &MarginalWeights,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<Coupling> {
    w.check_against(cost)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Argument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let (m, n) = cost.dim();
    let scaled = cost.values().as_standard_layout().mapv(|c| c / epsilon);
    let k = scaled.as_slice().expect("standard layout");
    let log_a: Vec<f64> = w.row().iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = w.col().iter().map(|v| v.ln()).collect();

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut row_lse = vec![0.0; m];
    let mut col_max = vec![0.0; n];
    let mut col_sum = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        // Row log-sum-exp against the current g.
        for i in 0..m {
            let row = &k[i * n..(i + 1) * n];
            let mut mx = f64::NEG_INFINITY;
            for (gj, kij) in g.iter().zip(row) {
                mx = mx.max(gj - kij);
            }
            let s: f64 = g.iter().zip(row).map(|(gj, kij)| (gj - kij - mx).exp()).sum();
            row_lse[i] = mx + s.ln();
        }
        if iterations > 0 {
            let err = (0..m)
                .map(|i| ((f[i] + row_lse[i]).exp() - w.row()[i]).abs())
                .fold(0.0, f64::max);
            if err.is_nan() {
                return Err(nan_error(epsilon));
            }
            if err < tol {
                converged = true;
                break;
            }
        }
        for i in 0..m {
            f[i] = log_a[i] - row_lse[i];
        }

        // Column log-sum-exp against the new f, row-major traversal.
        col_max.fill(f64::NEG_INFINITY);
        for i in 0..m {
            let row = &k[i * n..(i + 1) * n];
            let fi = f[i];
            for (cm, kij) in col_max.iter_mut().zip(row) {
                *cm = cm.max(fi - kij);
            }
        }
        col_sum.fill(0.0);
        for i in 0..m {
            let row = &k[i * n..(i + 1) * n];
            let fi = f[i];
            for ((cs, cm), kij) in col_sum.iter_mut().zip(&col_max).zip(row) {
                *cs += (fi - kij - cm).exp();
            }
        }
        for j in 0..n {
            g[j] = log_b[j] - (col_max[j] + col_sum[j].ln());
        }
        iterations += 1;
        if f.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(nan_error(epsilon));
        }
    }

    let mut plan = Array2::from_shape_fn((m, n), |(i, j)| (f[i] + g[j] - k[i * n + j]).exp());
    if plan.iter().any(|v| !v.is_finite()) {
        return Err(nan_error(epsilon));
    }
    let residual = marginal_violation(&plan, w);
    if !converged {
        log::warn!("sinkhorn stopped after {iterations} iterations with marginal violation {residual:.3e}");
    }
    round_to_feasible(&mut plan, w);
    let total_cost = plan.iter().zip(cost.values().iter()).map(|(p, c)| p * c).sum();
    let marginal_violation = marginal_violation(&plan, w);
    Ok(Coupling {
        plan,
        total_cost,
        info: SolverInfo {
            solver: SolverKind::Sinkhorn,
            iterations,
            marginal_violation,
            residual,
            epsilon: Some(epsilon),
            converged,
        },
    })
}

/// Projects a nonnegative plan onto the couplings of `w`.
fn round_to_feasible(plan: &mut Array2<f64>, w: &MarginalWeights) {
    for (mut row, &a) in plan.rows_mut().into_iter().zip(w.row()) {
        let r = row.sum();
        if r > a {
            row *= a / r;
        }
    }
    for (mut col, &b) in plan.columns_mut().into_iter().zip(w.col()) {
        let c = col.sum();
        if c > b {
            col *= b / c;
        }
    }
    let err_r: Vec<f64> = plan.rows().into_iter().zip(w.row()).map(|(r, &a)| (a - r.sum()).max(0.0)).collect();
    let err_c: Vec<f64> =
        plan.columns().into_iter().zip(w.col()).map(|(c, &b)| (b - c.sum()).max(0.0)).collect();
    let total: f64 = err_c.iter().sum();
    if total > 0.0 {
        for ((i, j), p) in plan.indexed_iter_mut() {
            *p += err_r[i] * err_c[j] / total;
        }
    }
}

fn nan_error(epsilon: f64) -> Error {
    Error::Numerical(format!(
        "non-finite Sinkhorn iterate; epsilon {epsilon:e} is too small for the cost scale"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::solve_exact;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_epsilon_approaches_zero_cost() {
        let cost = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let c = solve_sinkhorn(&cost, &MarginalWeights::uniform(2, 2), 0.01, 1000, 1e-12).unwrap();
        assert!(c.total_cost() < 0.01);
        assert!(c.info().converged);
    }

    #[test]
    fn large_epsilon_approaches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let values = Array2::from_shape_fn((4, 6), |_| rng.random_range(0.0..3.0));
        let cost = CostMatrix::new(values).unwrap();
        let eps = 100.0 * cost.max();
        let c = solve_sinkhorn(&cost, &MarginalWeights::uniform(4, 6), eps, 1000, 1e-12).unwrap();
        for p in c.plan() {
            assert!((p - 1.0 / 24.0).abs() < 1e-3);
        }
    }

    #[test]
    fn close_to_exact_on_random_6x6() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let cost = CostMatrix::new(Array2::from_shape_fn((6, 6), |_| rng.random::<f64>())).unwrap();
            let w = MarginalWeights::uniform(6, 6);
            let exact = solve_exact(&cost, &w).unwrap().total_cost();
            let s = solve_sinkhorn(&cost, &w, 0.001 * cost.max(), 1000, 1e-9).unwrap();
            assert!((s.total_cost() - exact).abs() <= 0.01 * exact, "{} vs {exact}", s.total_cost());
            assert!(s.total_cost() >= exact - 1e-9, "{} {} {:?}", s.total_cost(), exact, s.info());
            assert!(s.info().marginal_violation < 1e-12);
        }
    }

    #[test]
    fn rounding_repairs_an_unconverged_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cost = CostMatrix::new(Array2::from_shape_fn((5, 7), |_| rng.random::<f64>())).unwrap();
        let row = ndarray::Array1::from_shape_fn(5, |i| (i + 1) as f64 / 15.0);
        let w = MarginalWeights::new(row, ndarray::Array1::from_elem(7, 1.0 / 7.0)).unwrap();
        let c = solve_sinkhorn(&cost, &w, 0.01, 3, 1e-12).unwrap();
        assert!(!c.info().converged);
        assert!(c.info().residual > 1e-4);
        assert!(c.info().marginal_violation < 1e-15);
        assert!(c.plan().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn non_convergence_is_flagged_not_an_error() {
        let cost = CostMatrix::new(array![[0.0, 1.0, 2.0], [2.0, 0.0, 1.0]]).unwrap();
        let c = solve_sinkhorn(&cost, &MarginalWeights::uniform(2, 3), 0.001, 2, 1e-15).unwrap();
        assert!(!c.info().converged);
        assert_eq!(c.info().iterations, 2);
    }

    #[test]
    fn tiny_epsilon_stays_finite_in_log_domain() {
        let cost = CostMatrix::new(array![[0.0, 1000.0], [1000.0, 0.0]]).unwrap();
        let c = solve_sinkhorn(&cost, &MarginalWeights::uniform(2, 2), 1e-3, 100, 1e-12).unwrap();
        assert!(c.total_cost() < 1e-9);
    }
}
