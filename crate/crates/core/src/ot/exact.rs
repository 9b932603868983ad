//! Primal network simplex for the dense transportation problem.
//!
//! Nodes `0..m` are supplies, `m..m+n` demands and `m+n` an artificial root.
//! Every node starts attached to the root by an artificial arc: supplies by
//! a zero-cost arc towards the root, demands by an arc from the root whose
//! cost exceeds any supply-demand path, so all artificial flow is driven out.
//!
//! Entering arcs come from a block search over the real arcs (most negative
//! reduced cost in the block, lowest index on ties). The leaving arc follows
//! the strongly-feasible-tree rule: the last blocking arc met when walking
//! the cycle in its orientation from the apex. This keeps degenerate pivots
//! from cycling, which matters here because uniform square instances are
//! maximally degenerate.

use ndarray::Array2;

use super::{marginal_violation, CostMatrix, Coupling, MarginalWeights, SolverInfo, SolverKind};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
/// Relative slack on reduced costs; anything above is treated as non-negative.
const REDUCED_COST_EPS: f64 = 1e-12;

struct NetworkSimplex<'a> {
    m: usize,
    n: usize,
    root: usize,
    cost: &'a [f64],
    art_cost: f64,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    tree_adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// The arc to the parent points from the node towards the parent.
    pred_up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    next_arc: usize,
    block: usize,
    stack: Vec<usize>,
}

impl<'a> NetworkSimplex<'a> {
    fn new(cost: &'a [f64], max_cost: f64, w: &MarginalWeights) -> Self {
        let (m, n) = w.dim();
        let nodes = m + n + 1;
        let root = m + n;
        let real = m * n;
        let art_cost = if max_cost > 0.0 {
            (nodes as f64 + 1.0) * max_cost
        } else {
            1.0
        };

        let mut flow = vec![0.0; real + m + n];
        let mut in_tree = vec![false; real + m + n];
        let mut tree_adj = vec![Vec::new(); nodes];
        for v in 0..m + n {
            let e = real + v;
            flow[e] = if v < m { w.row()[v] } else { w.col()[v - m] };
            in_tree[e] = true;
            tree_adj[v].push(e);
            tree_adj[root].push(e);
        }
        let block = ((real as f64).sqrt().ceil() as usize).max(10).min(real.max(1));
        let mut ns = Self {
            m,
            n,
            root,
            cost,
            art_cost,
            flow,
            in_tree,
            tree_adj,
            parent: vec![NONE; nodes],
            pred: vec![NONE; nodes],
            pred_up: vec![false; nodes],
            depth: vec![0; nodes],
            pi: vec![0.0; nodes],
            next_arc: 0,
            block,
            stack: Vec::with_capacity(nodes),
        };
        ns.rebuild_tree();
        ns
    }

    #[inline]
    fn endpoints(&self, e: usize) -> (usize, usize) {
        let real = self.m * self.n;
        if e < real {
            (e / self.n, self.m + e % self.n)
        } else {
            let v = e - real;
            if v < self.m {
                (v, self.root)
            } else {
                (self.root, v)
            }
        }
    }

    #[inline]
    fn arc_cost(&self, e: usize) -> f64 {
        let real = self.m * self.n;
        if e < real {
            self.cost[e]
        } else if e - real < self.m {
            0.0
        } else {
            self.art_cost
        }
    }

    /// Recompute parent pointers, depths and potentials from the root.
    fn rebuild_tree(&mut self) {
        let root = self.root;
        self.parent[root] = NONE;
        self.pred[root] = NONE;
        self.depth[root] = 0;
        self.pi[root] = 0.0;
        self.stack.clear();
        self.stack.push(root);
        while let Some(u) = self.stack.pop() {
            for k in 0..self.tree_adj[u].len() {
                let e = self.tree_adj[u][k];
                if e == self.pred[u] {
                    continue;
                }
                let (s, t) = self.endpoints(e);
                let (v, up) = if s == u { (t, false) } else { (s, true) };
                self.parent[v] = u;
                self.pred[v] = e;
                self.pred_up[v] = up;
                self.depth[v] = self.depth[u] + 1;
                // Tree arcs have zero reduced cost: c + pi[s] - pi[t] = 0.
                let c = self.arc_cost(e);
                self.pi[v] = if up { self.pi[u] - c } else { self.pi[u] + c };
                self.stack.push(v);
            }
        }
    }

    fn find_entering(&mut self) -> Option<usize> {
        let real = self.m * self.n;
        let mut best = None;
        let mut min = 0.0;
        let mut cnt = self.block;
        let mut e = self.next_arc;
        let (mut i, mut j) = (e / self.n, e % self.n);
        for _ in 0..real {
            if !self.in_tree[e] {
                let (ps, pt) = (self.pi[i], self.pi[self.m + j]);
                let c = self.cost[e] + ps - pt;
                if c < min {
                    let scale = self.cost[e].abs().max(ps.abs()).max(pt.abs());
                    if c < -REDUCED_COST_EPS * scale {
                        min = c;
                        best = Some(e);
                    }
                }
            }
            e += 1;
            j += 1;
            if j == self.n {
                j = 0;
                i += 1;
            }
            if e == real {
                e = 0;
                i = 0;
                j = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if best.is_some() {
                    break;
                }
                cnt = self.block;
            }
        }
        if best.is_some() {
            self.next_arc = e;
        }
        best
    }

    fn find_join(&self, mut u: usize, mut v: usize) -> usize {
        while self.depth[u] > self.depth[v] {
            u = self.parent[u];
        }
        while self.depth[v] > self.depth[u] {
            v = self.parent[v];
        }
        while u != v {
            u = self.parent[u];
            v = self.parent[v];
        }
        u
    }

    /// One pivot on entering arc `e_in`.
    fn pivot(&mut self, e_in: usize) -> Result<()> {
        let (s, t) = self.endpoints(e_in);
        let join = self.find_join(s, t);

        // Flow runs s -> t along e_in, so arcs on the s-side pointing up and
        // arcs on the t-side pointing down are traversed backwards and block.
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut u = s;
        while u != join {
            if self.pred_up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                }
            }
            u = self.parent[u];
        }
        let mut u = t;
        while u != join {
            if !self.pred_up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                }
            }
            u = self.parent[u];
        }
        if u_out == NONE {
            return Err(Error::Numerical("unbounded transportation cycle".into()));
        }

        if delta > 0.0 {
            self.flow[e_in] += delta;
            let mut u = s;
            while u != join {
                let e = self.pred[u];
                if self.pred_up[u] {
                    self.flow[e] -= delta;
                } else {
                    self.flow[e] += delta;
                }
                u = self.parent[u];
            }
            let mut u = t;
            while u != join {
                let e = self.pred[u];
                if self.pred_up[u] {
                    self.flow[e] += delta;
                } else {
                    self.flow[e] -= delta;
                }
                u = self.parent[u];
            }
        }

        let e_out = self.pred[u_out];
        self.flow[e_out] = 0.0;
        self.in_tree[e_out] = false;
        self.in_tree[e_in] = true;
        let (os, ot) = self.endpoints(e_out);
        for node in [os, ot] {
            let adj = &mut self.tree_adj[node];
            let pos = adj.iter().position(|&x| x == e_out).expect("tree arc listed");
            adj.swap_remove(pos);
        }
        self.tree_adj[s].push(e_in);
        self.tree_adj[t].push(e_in);
        self.rebuild_tree();
        Ok(())
    }

    fn run(&mut self) -> Result<usize> {
        let arcs = self.m * self.n + self.m + self.n;
        let limit = 100 * arcs + 10_000;
        let mut pivots = 0;
        while let Some(e) = self.find_entering() {
            self.pivot(e)?;
            pivots += 1;
            if pivots > limit {
                return Err(Error::Numerical(format!(
                    "network simplex exceeded {limit} pivots"
                )));
            }
        }
        Ok(pivots)
    }
}

/// Exact optimal coupling by network simplex.
pub fn solve_exact(cost: &CostMatrix, w: &MarginalWeights) -> Result<Coupling> {
    w.check_against(cost)?;
    let (m, n) = cost.dim();
    let values = cost.values().as_standard_layout();
    let flat = values.as_slice().expect("standard layout");
    let mut ns = NetworkSimplex::new(flat, cost.max(), w);
    let pivots = ns.run()?;

    let plan = Array2::from_shape_vec((m, n), ns.flow[..m * n].to_vec()).expect("shape");
    let total_cost = plan.iter().zip(flat).map(|(p, c)| p * c).sum();
    let marginal_violation = marginal_violation(&plan, w);
    Ok(Coupling {
        plan,
        total_cost,
        info: SolverInfo {
            solver: SolverKind::Exact,
            iterations: pivots,
            marginal_violation,
            residual: marginal_violation,
            epsilon: None,
            converged: true,
        },
    })
}
