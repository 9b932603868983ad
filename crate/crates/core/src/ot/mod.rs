//! Discrete optimal transport: cost matrices, couplings and two solvers.
//!
//! [`solve_exact`] is a network simplex on the complete bipartite
//! transportation graph and returns an optimal vertex of the transportation
//! polytope. [`solve_sinkhorn`] solves the entropy-regularized problem with
//! log-domain (log-sum-exp) updates. [`solve`] dispatches between them
//! according to a [`SolverConfig`].

mod cost;
mod exact;
mod sinkhorn;

pub use cost::pairwise_sq_euclidean;
pub use exact::solve_exact;
pub use sinkhorn::solve_sinkhorn;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative, finite `m x n` ground cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("cost matrix is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Argument(format!(
                "cost entries must be finite and >= 0, found {v}"
            )));
        }
        Ok(Self(values))
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_trusted(values: Array2<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.mapv(|v| v * s))
    }
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Row and column marginals of a transport problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalWeights {
    row: Array1<f64>,
    col: Array1<f64>,
}

impl MarginalWeights {
    pub fn new(row: Array1<f64>, col: Array1<f64>) -> Result<Self> {
        for (what, w) in [("row", &row), ("column", &col)] {
            if w.is_empty() {
                return Err(Error::Argument(format!("{what} weights are empty")));
            }
            if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Argument(format!(
                    "{what} weights must be positive, found {v}"
                )));
            }
            let s = w.sum();
            if (s - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::Argument(format!("{what} weights sum to {s}, not 1")));
            }
        }
        Ok(Self { row, col })
    }

    pub fn uniform(m: usize, n: usize) -> Self {
        assert!(m > 0 && n > 0, "uniform weights need m, n > 0");
        Self {
            row: Array1::from_elem(m, 1.0 / m as f64),
            col: Array1::from_elem(n, 1.0 / n as f64),
        }
    }

    pub fn row(&self) -> &Array1<f64> {
        &self.row
    }

    pub fn col(&self) -> &Array1<f64> {
        &self.col
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.row.len(), self.col.len())
    }

    fn check_against(&self, cost: &CostMatrix) -> Result<()> {
        if self.dim() != cost.dim() {
            return Err(Error::Argument(format!(
                "marginals are {:?} but cost matrix is {:?}",
                self.dim(),
                cost.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Sinkhorn,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Exact => "exact",
            SolverKind::Sinkhorn => "sinkhorn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverInfo {
    pub solver: SolverKind,
    /// Simplex pivots or Sinkhorn sweeps.
    pub iterations: usize,
    /// `max(|rowsum - row|, |colsum - col|)` of the returned plan.
    pub marginal_violation: f64,
    /// Marginal violation of the last Sinkhorn iterate, before rounding onto
    /// the feasible set. Equal to `marginal_violation` for the exact solver.
    pub residual: f64,
    /// Absolute regularization, in cost units.
    pub epsilon: Option<f64>,
    /// False when Sinkhorn stopped at `max_iters` with `residual` above tolerance.
    pub converged: bool,
}

/// A transport plan with its cost and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    plan: Array2<f64>,
    total_cost: f64,
    info: SolverInfo,
}

impl Coupling {
    pub fn plan(&self) -> &Array2<f64> {
        &self.plan
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn info(&self) -> &SolverInfo {
        &self.info
    }

    pub fn into_plan(self) -> Array2<f64> {
        self.plan
    }
}

/// Which solver [`solve`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    /// Exact when `m * n <= exact_max_entries`, Sinkhorn otherwise.
    Auto,
    Exact,
    Sinkhorn,
}

impl std::str::FromStr for SolverChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "exact" => Ok(Self::Exact),
            "sinkhorn" => Ok(Self::Sinkhorn),
            _ => Err(Error::Argument(format!(
                "unknown solver {s:?} (expected exact, sinkhorn or auto)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub solver: SolverChoice,
    /// Sinkhorn regularization relative to the largest cost entry.
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub exact_max_entries: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            solver: SolverChoice::Auto,
            epsilon: 0.1,
            max_iters: 1000,
            tol: 1e-9,
            exact_max_entries: 90_000,
        }
    }
}

impl SolverConfig {
    pub fn exact() -> Self {
        Self {
            solver: SolverChoice::Exact,
            ..Self::default()
        }
    }

    pub fn sinkhorn(epsilon: f64) -> Self {
        Self {
            solver: SolverChoice::Sinkhorn,
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Argument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Argument(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be positive".into()));
        }
        Ok(())
    }

    /// The concrete solver used for an `m x n` problem.
    pub fn resolve(&self, m: usize, n: usize) -> SolverKind {
        match self.solver {
            SolverChoice::Exact => SolverKind::Exact,
            SolverChoice::Sinkhorn => SolverKind::Sinkhorn,
            SolverChoice::Auto if m.saturating_mul(n) <= self.exact_max_entries => {
                SolverKind::Exact
            }
            SolverChoice::Auto => SolverKind::Sinkhorn,
        }
    }
}

/// Solve with the configured solver. Sinkhorn runs on the cost divided by
/// its largest entry with `epsilon` taken relative to that scale; the
/// reported cost is in the original units.
pub fn solve(cost: &CostMatrix, w: &MarginalWeights, cfg: &SolverConfig) -> Result<Coupling> {
    cfg.validate()?;
    let (m, n) = cost.dim();
    match cfg.resolve(m, n) {
        SolverKind::Exact => solve_exact(cost, w),
        SolverKind::Sinkhorn => {
            let scale = cost.max();
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let normalized = cost.scaled(1.0 / scale);
            let mut c = solve_sinkhorn(&normalized, w, cfg.epsilon, cfg.max_iters, cfg.tol)?;
            c.total_cost = frobenius(c.plan.view(), cost.values().view());
            c.info.epsilon = Some(cfg.epsilon * scale);
            Ok(c)
        }
    }
}

fn frobenius(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Frobenius inner product of a plan with a cost matrix.
pub fn transport_cost(plan: &Array2<f64>, cost: &CostMatrix) -> Result<f64> {
    if plan.dim() != cost.dim() {
        return Err(Error::Argument(format!(
            "plan is {:?} but cost matrix is {:?}",
            plan.dim(),
            cost.dim()
        )));
    }
    Ok(frobenius(plan.view(), cost.values().view()))
}

/// Largest absolute deviation of the plan's row/column sums from `w`.
pub fn marginal_violation(plan: &Array2<f64>, w: &MarginalWeights) -> f64 {
    let rows = plan.sum_axis(Axis(1));
    let cols = plan.sum_axis(Axis(0));
    let r = rows
        .iter()
        .zip(w.row())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let c = cols
        .iter()
        .zip(w.col())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    r.max(c)
}
