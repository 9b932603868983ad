use approx::assert_abs_diff_eq;
use jcnce::ot::{
    marginal_violation, pairwise_sq_euclidean, solve_exact, solve_sinkhorn, transport_cost,
    CostMatrix, MarginalWeights,
};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;

fn brute_force_assignment(c: &Array2<f64>) -> f64 {
    fn go(c: &Array2<f64>, row: usize, used: &mut [bool]) -> f64 {
        if row == c.nrows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..c.ncols() {
            if !used[j] {
                used[j] = true;
                best = best.min(c[[row, j]] + go(c, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(c, 0, &mut vec![false; c.ncols()]) / c.nrows() as f64
}

fn cost_strategy(max: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max, 1..=max).prop_flat_map(|(m, n)| {
        proptest::collection::vec(0.0f64..1.0, m * n)
            .prop_map(move |v| Array2::from_shape_vec((m, n), v).unwrap())
    })
}

fn square_strategy(max: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max).prop_flat_map(|n| {
        proptest::collection::vec(0.0f64..1.0, n * n)
            .prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
    })
}

fn weights(m: usize, n: usize, raw_r: &[f64], raw_c: &[f64]) -> MarginalWeights {
    let r = Array1::from_iter(raw_r[..m].iter().map(|v| v + 0.1));
    let c = Array1::from_iter(raw_c[..n].iter().map(|v| v + 0.1));
    let (sr, sc) = (r.sum(), c.sum());
    MarginalWeights::new(r / sr, c / sc).unwrap()
}

#[test]
fn pairwise_examples() {
    let z = pairwise_sq_euclidean(array![[0.0, 0.0]].view(), array![[0.0, 0.0]].view()).unwrap();
    assert_eq!(z.values(), &array![[0.0]]);
    let c = pairwise_sq_euclidean(array![[0.0, 0.0]].view(), array![[3.0, 4.0]].view()).unwrap();
    assert_eq!(c.values(), &array![[25.0]]);
    assert!(pairwise_sq_euclidean(array![[0.0]].view(), array![[0.0, 1.0]].view()).is_err());
}

#[test]
fn pairwise_matches_double_loop() {
    let a = Array2::from_shape_fn((5, 3), |(i, k)| (i as f64 * 0.7 - k as f64 * 1.3).sin());
    let b = Array2::from_shape_fn((4, 3), |(j, k)| (j as f64 * 1.1 + k as f64 * 0.4).cos());
    let c = pairwise_sq_euclidean(a.view(), b.view()).unwrap();
    for i in 0..5 {
        for j in 0..4 {
            let mut s = 0.0;
            for k in 0..3 {
                s += (a[[i, k]] - b[[j, k]]).powi(2);
            }
            assert_abs_diff_eq!(c.values()[[i, j]], s, epsilon = 1e-10);
        }
    }
}

#[test]
fn exact_diagonal_and_antidiagonal() {
    let w = MarginalWeights::uniform(2, 2);
    let diag = solve_exact(&CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap(), &w).unwrap();
    assert_eq!(diag.plan(), &array![[0.5, 0.0], [0.0, 0.5]]);
    assert_eq!(diag.total_cost(), 0.0);
    let anti = solve_exact(&CostMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap(), &w).unwrap();
    assert_eq!(anti.plan(), &array![[0.0, 0.5], [0.5, 0.0]]);
    assert_eq!(anti.total_cost(), 0.0);
}

#[test]
fn sinkhorn_examples() {
    let w = MarginalWeights::uniform(2, 2);
    let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
    let sharp = solve_sinkhorn(&c, &w, 0.01, 1000, 1e-9).unwrap();
    assert!(sharp.total_cost() < 0.01);

    let c = CostMatrix::new(array![[0.3, 0.9, 0.1], [0.5, 0.2, 0.8]]).unwrap();
    let w = MarginalWeights::new(array![0.3, 0.7], array![0.2, 0.5, 0.3]).unwrap();
    let flat = solve_sinkhorn(&c, &w, 100.0 * c.max(), 1000, 1e-12).unwrap();
    for i in 0..2 {
        for j in 0..3 {
            assert_abs_diff_eq!(flat.plan()[[i, j]], w.row()[i] * w.col()[j], epsilon = 1e-3);
        }
    }
}

#[test]
fn transport_cost_examples() {
    let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
    assert_eq!(transport_cost(&array![[0.5, 0.0], [0.0, 0.5]], &c).unwrap(), 0.0);
    let ones = CostMatrix::new(Array2::ones((3, 4))).unwrap();
    let product = Array2::from_elem((3, 4), 1.0 / 12.0);
    assert_abs_diff_eq!(transport_cost(&product, &ones).unwrap(), 1.0, epsilon = 1e-15);
    assert!(transport_cost(&product, &c).is_err());

    let plan = Array2::from_shape_fn((3, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin().abs());
    let cost = CostMatrix::new(Array2::from_shape_fn((3, 5), |(i, j)| (i + 2 * j) as f64 * 0.3)).unwrap();
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..5 {
            s += plan[[i, j]] * cost.values()[[i, j]];
        }
    }
    assert_abs_diff_eq!(transport_cost(&plan, &cost).unwrap(), s, epsilon = 1e-12);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(CostMatrix::new(array![[f64::NAN]]).is_err());
    assert!(CostMatrix::new(array![[-1.0]]).is_err());
    assert!(MarginalWeights::new(array![0.5, 0.6], array![1.0]).is_err());
    assert!(MarginalWeights::new(array![1.0, 0.0], array![1.0]).is_err());
    let c = CostMatrix::new(array![[1.0, 2.0]]).unwrap();
    assert!(solve_exact(&c, &MarginalWeights::uniform(2, 2)).is_err());
    assert!(solve_sinkhorn(&c, &MarginalWeights::uniform(1, 2), 0.0, 10, 1e-9).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_matches_permutation_oracle(c in square_strategy(7)) {
        let n = c.nrows();
        let oracle = brute_force_assignment(&c);
        let got = solve_exact(&CostMatrix::new(c).unwrap(), &MarginalWeights::uniform(n, n)).unwrap();
        prop_assert!((got.total_cost() - oracle).abs() <= 1e-9);
    }

    #[test]
    fn couplings_are_feasible_and_sandwiched(
        c in cost_strategy(8),
        raw_r in proptest::collection::vec(0.0f64..1.0, 8),
        raw_c in proptest::collection::vec(0.0f64..1.0, 8),
        eps in 0.01f64..1.0,
    ) {
        let (m, n) = c.dim();
        let w = weights(m, n, &raw_r, &raw_c);
        let cost = CostMatrix::new(c).unwrap();
        let exact = solve_exact(&cost, &w).unwrap();
        prop_assert!(exact.plan().iter().all(|&v| v >= 0.0));
        prop_assert!(marginal_violation(exact.plan(), &w) <= 1e-12);
        let rel = (exact.total_cost() - transport_cost(exact.plan(), &cost).unwrap()).abs();
        prop_assert!(rel <= 1e-9 * exact.total_cost().max(1.0));

        let sk = solve_sinkhorn(&cost, &w, eps, 1000, 1e-9).unwrap();
        prop_assert!(sk.plan().iter().all(|&v| v >= 0.0));
        prop_assert!(marginal_violation(sk.plan(), &w) <= 1e-6);
        prop_assert!(exact.total_cost() <= sk.total_cost() + 1e-9);
    }

    #[test]
    fn sinkhorn_cost_grows_with_epsilon(c in cost_strategy(6)) {
        let (m, n) = c.dim();
        let w = MarginalWeights::uniform(m, n);
        let cost = CostMatrix::new(c).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for eps in [0.05, 0.1, 0.2, 0.5, 1.0, 2.0] {
            let got = solve_sinkhorn(&cost, &w, eps, 20_000, 1e-12).unwrap().total_cost();
            prop_assert!(got >= prev - 1e-9, "eps {eps}: {got} < {prev}");
            prev = got;
        }
    }

    #[test]
    fn exact_is_scale_equivariant(c in cost_strategy(7), s in 0.1f64..10.0) {
        let (m, n) = c.dim();
        let w = MarginalWeights::uniform(m, n);
        let base = solve_exact(&CostMatrix::new(c.clone()).unwrap(), &w).unwrap();
        let scaled = solve_exact(&CostMatrix::new(c * s).unwrap(), &w).unwrap();
        prop_assert!((scaled.total_cost() - s * base.total_cost()).abs() <= 1e-9 * s.max(1.0));
        let support = |p: &Array2<f64>| p.mapv(|v| v > 1e-15);
        prop_assert_eq!(support(base.plan()), support(scaled.plan()));
    }
}
