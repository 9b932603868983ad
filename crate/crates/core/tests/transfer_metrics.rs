use approx::assert_abs_diff_eq;
use jcnce::data::{SourcePredictions, TaskDataset};
use jcnce::label::{label_wasserstein_matrix, LabelConfig};
use jcnce::metrics::{
    h_score, jc_nce, joint_label_distribution, leep_score, nce_score, ot_nce, otce_fit,
    otce_predict, wasserstein_domain_distance, OtceModel, OtceRecord, PairScorer, ScoreConfig,
};
use jcnce::ot::{pairwise_sq_euclidean, solve_exact, transport_cost, MarginalWeights, SolverConfig};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

mod common;
use common::{dataset_strategy, nce_oracle, permutations, sized_dataset};

fn exact_cfg() -> ScoreConfig {
    ScoreConfig {
        solver: SolverConfig::exact(),
        ..ScoreConfig::default()
    }
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn gaussian_classes(rng: &mut ChaCha8Rng, means: &[[f64; 2]], per_class: usize) -> TaskDataset {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, m) in means.iter().enumerate() {
        for _ in 0..per_class {
            let e: [f64; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
            xs.push(vec![m[0] + e[0], m[1] + e[1]]);
            ys.push(k);
        }
    }
    TaskDataset::from_rows("g", &xs, &ys).unwrap()
}

fn relabel(d: &TaskDataset, perm: &[usize]) -> TaskDataset {
    let labels = d.labels().iter().map(|&y| perm[y]).collect();
    d.with_labels(labels, d.num_classes()).unwrap()
}

fn permute_rows(d: &TaskDataset, order: &[usize]) -> TaskDataset {
    d.select(order).unwrap()
}

#[test]
fn joint_distribution_examples() {
    let id = Array2::from_diag(&array![0.25, 0.25, 0.25, 0.25]);
    let jld = joint_label_distribution(&id, &[0, 0, 1, 1], &[0, 0, 1, 1], 2, 2).unwrap();
    assert_eq!(jld.p(), &array![[0.5, 0.0], [0.0, 0.5]]);

    let (r, c) = (array![0.2, 0.3, 0.5], array![0.1, 0.6, 0.3]);
    let product = Array2::from_shape_fn((3, 3), |(i, j)| r[i] * c[j]);
    let (sl, tl) = ([0, 1, 1], [1, 0, 1]);
    let jld = joint_label_distribution(&product, &sl, &tl, 2, 2).unwrap();
    let (pa, pb) = ([0.2, 0.8], [0.6, 0.4]);
    for ((a, b), &v) in jld.p().indexed_iter() {
        assert_abs_diff_eq!(v, pa[a] * pb[b], epsilon = 1e-15);
    }
}

#[test]
fn joint_distribution_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let raw = Array2::from_shape_fn((5, 5), |_| rng.random::<f64>());
    let plan = &raw / raw.sum();
    let sl = [0, 2, 1, 2, 0];
    let tl = [1, 1, 0, 2, 0];
    let jld = joint_label_distribution(&plan, &sl, &tl, 3, 3).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    if sl[i] == a && tl[j] == b {
                        s += plan[[i, j]];
                    }
                }
            }
            assert_abs_diff_eq!(jld.p()[[a, b]], s, epsilon = 1e-12);
        }
    }
    let rows = jld.p().sum_axis(ndarray::Axis(1));
    for (m, r) in jld.source_marginal().iter().zip(&rows) {
        assert_abs_diff_eq!(*m, *r, epsilon = 1e-12);
    }
}

#[test]
fn joint_distribution_rejects_lost_mass() {
    let plan = array![[0.5, 0.0], [0.0, 0.4]];
    assert!(joint_label_distribution(&plan, &[0, 1], &[0, 1], 2, 2).is_err());
    let tiny = array![[0.5, -1e-12], [0.0, 0.5 + 1e-12]];
    let jld = joint_label_distribution(&tiny, &[0, 1], &[0, 1], 2, 2).unwrap();
    assert!(jld.p().iter().all(|&v| v >= 0.0));
    assert_abs_diff_eq!(jld.p().sum(), 1.0, epsilon = 1e-12);
}

#[test]
fn jc_nce_drops_when_target_labels_are_shuffled() {
    let mut gaps = Vec::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = [[-4.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let src = gaussian_classes(&mut rng, &means, 20);
        let tgt = gaussian_classes(&mut rng, &means, 20);
        let mut shuffled_labels = tgt.labels().to_vec();
        shuffled_labels.shuffle(&mut rng);
        let shuffled = tgt.with_labels(shuffled_labels, 3).unwrap();
        let clean = jc_nce(&src, &tgt, &exact_cfg()).unwrap().score;
        let noisy = jc_nce(&src, &shuffled, &exact_cfg()).unwrap().score;
        assert!(noisy < clean, "seed {seed}: shuffled {noisy} >= clean {clean}");
        gaps.push(clean - noisy);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    println!("mean shuffle gap {mean_gap:.3} nats over 20 seeds");
}

#[test]
fn same_distribution_scores_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let means = [[-5.0, 0.0], [5.0, 0.0]];
    let src = gaussian_classes(&mut rng, &means, 30);
    let tgt = gaussian_classes(&mut rng, &means, 30);
    let s = jc_nce(&src, &tgt, &exact_cfg()).unwrap().score;
    assert!(s.abs() <= 0.05, "{s}");
}

#[test]
fn absent_class_is_unsupported() {
    let src = TaskDataset::new("s", array![[0.0], [1.0], [2.0]], vec![0, 0, 2], 3).unwrap();
    let tgt = TaskDataset::from_rows("t", &[vec![0.0], vec![1.0]], &[0, 1]).unwrap();
    let e = jc_nce(&src, &tgt, &exact_cfg()).unwrap_err();
    assert!(e.to_string().contains('1'), "{e}");
}

#[test]
fn ot_nce_matches_from_scratch_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mk = |rng: &mut ChaCha8Rng, k: usize| {
        let xs: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let ys: Vec<usize> = (0..30).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        TaskDataset::from_rows("r", &xs, &ys).unwrap()
    };
    let src = mk(&mut rng, 3);
    let tgt = mk(&mut rng, 4);
    let got = ot_nce(&src, &tgt, &exact_cfg()).unwrap().score;

    let c = pairwise_sq_euclidean(src.features().view(), tgt.features().view()).unwrap();
    let plan = solve_exact(&c, &MarginalWeights::uniform(30, 30)).unwrap().into_plan();
    let mut p = vec![vec![0.0; 4]; 3];
    for i in 0..30 {
        for j in 0..30 {
            p[src.labels()[i]][tgt.labels()[j]] += plan[[i, j]];
        }
    }
    assert_abs_diff_eq!(got, nce_oracle(&p), epsilon = 1e-12);
    assert_eq!(ot_nce(&src, &src, &exact_cfg()).unwrap().score, 0.0);
}

#[test]
fn wasserstein_distance_examples() {
    let a = TaskDataset::from_rows("a", &[vec![0.0]], &[0]).unwrap();
    let b = TaskDataset::from_rows("b", &[vec![5.0]], &[0]).unwrap();
    assert_eq!(wasserstein_domain_distance(&a, &b, &exact_cfg()).unwrap().score, 25.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random(), rng.random()]).collect();
    let d = TaskDataset::from_rows("d", &xs, &[0; 12]).unwrap();
    assert_eq!(wasserstein_domain_distance(&d, &d, &exact_cfg()).unwrap().score, 0.0);

    let ys: Vec<Vec<f64>> = (0..9).map(|_| vec![rng.random(), rng.random()]).collect();
    let e = TaskDataset::from_rows("e", &ys, &[0; 9]).unwrap();
    let scorer = PairScorer::new(&d, &e, &exact_cfg()).unwrap();
    let coupling = scorer.sample_coupling().unwrap();
    let direct = transport_cost(coupling.plan(), scorer.sample_cost()).unwrap();
    let wd = scorer.wasserstein_distance().unwrap().score;
    assert_abs_diff_eq!(wd, direct, epsilon = 1e-12);
}

#[test]
fn nce_examples_and_counting_oracle() {
    let y = [0, 1, 2, 3, 1, 0];
    assert_eq!(nce_score(&y, &y, 4, 4).unwrap().score, 0.0);
    let uniform: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let s = nce_score(&[0; 40], &uniform, 1, 4).unwrap().score;
    assert_abs_diff_eq!(s, -(4f64.ln()), epsilon = 1e-12);
    assert!(nce_score(&[0, 1], &[0], 2, 2).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z: Vec<usize> = (0..50).map(|_| rng.random_range(0..3)).collect();
    let t: Vec<usize> = (0..50).map(|_| rng.random_range(0..4)).collect();
    let mut counts = vec![vec![0.0; 4]; 3];
    for (&a, &b) in z.iter().zip(&t) {
        counts[a][b] += 1.0 / 50.0;
    }
    assert_abs_diff_eq!(nce_score(&z, &t, 3, 4).unwrap().score, nce_oracle(&counts), epsilon = 1e-12);
}

#[test]
fn leep_examples_and_formula_oracle() {
    let labels = [0, 2, 1, 2, 0];
    let onehot = Array2::from_shape_fn((5, 3), |(i, k)| f64::from(labels[i] == k));
    let preds = SourcePredictions::new(onehot).unwrap();
    assert_eq!(leep_score(&preds, &labels, 3).unwrap().score, 0.0);

    let flat = SourcePredictions::new(Array2::from_elem((30, 5), 0.2)).unwrap();
    let uniform: Vec<usize> = (0..30).map(|i| i % 3).collect();
    assert_abs_diff_eq!(leep_score(&flat, &uniform, 3).unwrap().score, -(3f64.ln()), epsilon = 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let raw = Array2::from_shape_fn((30, 4), |_| rng.random::<f64>() + 0.01);
    let theta = &raw / &raw.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
    let y: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
    let mut joint = [[0.0f64; 3]; 4];
    for i in 0..30 {
        for z in 0..4 {
            joint[z][y[i]] += theta[[i, z]] / 30.0;
        }
    }
    let mut total = 0.0;
    for i in 0..30 {
        let mut eep = 0.0;
        for z in 0..4 {
            let pz: f64 = joint[z].iter().sum();
            eep += joint[z][y[i]] / pz * theta[[i, z]];
        }
        total += eep.ln();
    }
    let preds = SourcePredictions::new(theta).unwrap();
    assert_abs_diff_eq!(leep_score(&preds, &y, 3).unwrap().score, total / 30.0, epsilon = 1e-12);
}

#[test]
fn h_score_examples() {
    let same = TaskDataset::from_rows("s", &vec![vec![1.0, 2.0]; 6], &[0, 1, 0, 1, 0, 1]).unwrap();
    assert_eq!(h_score(&same).unwrap().score, 0.0);

    // Two classes at +e1 and -e1: cov(f) = cov(g) = diag(1, 0).
    let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0]).collect();
    let ys: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let d = TaskDataset::from_rows("pm", &xs, &ys).unwrap();
    let gamma = 1e-8 * 1.0 / 2.0;
    assert_abs_diff_eq!(h_score(&d).unwrap().score, 1.0 / (1.0 + gamma), epsilon = 1e-9);
}

#[test]
fn h_score_drops_when_labels_are_shuffled() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let d = gaussian_classes(&mut rng, &[[-3.0, 0.0], [3.0, 1.0], [0.0, -3.0]], 25);
        let mut y = d.labels().to_vec();
        y.shuffle(&mut rng);
        let shuffled = d.with_labels(y, 3).unwrap();
        assert!(h_score(&shuffled).unwrap().score < h_score(&d).unwrap().score);
    }
}

#[test]
fn otce_examples() {
    let m = OtceModel {
        b0: 0.0,
        b1: 0.0,
        b2: 1.0,
        residual_rms: 0.0,
    };
    assert_eq!(otce_predict(&m, 123.0, -0.3), -0.3);
    let m = OtceModel {
        b0: 1.0,
        b1: -1.0,
        b2: 0.0,
        residual_rms: 0.0,
    };
    assert_eq!(otce_predict(&m, 1.0, -5.0), 0.0);

    let truth = |wd: f64, nce: f64| 0.7 - 0.02 * wd + 0.3 * nce;
    let pts = [(1.0, -0.5), (3.0, -0.1), (2.0, -1.2)];
    let recs: Vec<OtceRecord> = pts
        .iter()
        .map(|&(wd, nce)| OtceRecord {
            wd,
            nce,
            accuracy: truth(wd, nce),
        })
        .collect();
    let fit = otce_fit(&recs).unwrap();
    assert_abs_diff_eq!(fit.b0, 0.7, epsilon = 1e-9);
    assert_abs_diff_eq!(fit.b1, -0.02, epsilon = 1e-9);
    assert_abs_diff_eq!(fit.b2, 0.3, epsilon = 1e-9);
    assert_abs_diff_eq!(otce_predict(&fit, 3.0, -0.1), truth(3.0, -0.1), epsilon = 1e-9);
    assert!(otce_fit(&recs[..2]).is_err());
}

#[test]
fn otce_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let recs: Vec<OtceRecord> = (0..10)
        .map(|_| {
            let (wd, nce) = (rng.random::<f64>() * 5.0, -rng.random::<f64>());
            OtceRecord {
                wd,
                nce,
                accuracy: 0.5 - 0.05 * wd + 0.2 * nce + 0.01 * (rng.random::<f64>() - 0.5),
            }
        })
        .collect();
    // X^T X b = X^T y by Cramer's rule.
    let mut a = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for r in &recs {
        let x = [1.0, r.wd, r.nce];
        for i in 0..3 {
            rhs[i] += x[i] * r.accuracy;
            for j in 0..3 {
                a[i][j] += x[i] * x[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    let coef: Vec<f64> = (0..3)
        .map(|k| {
            let mut m = a;
            for i in 0..3 {
                m[i][k] = rhs[i];
            }
            det(&m) / d
        })
        .collect();
    let fit = otce_fit(&recs).unwrap();
    assert_abs_diff_eq!(fit.b0, coef[0], epsilon = 1e-9);
    assert_abs_diff_eq!(fit.b1, coef[1], epsilon = 1e-9);
    assert_abs_diff_eq!(fit.b2, coef[2], epsilon = 1e-9);
}

fn pair_strategy() -> impl Strategy<Value = (TaskDataset, TaskDataset)> {
    (1usize..=4, 1usize..=4, 1usize..=3).prop_flat_map(|(ks, kt, d)| {
        (
            (ks.max(2)..=24).prop_flat_map(move |n| sized_dataset(n, ks, d)),
            (kt.max(2)..=24).prop_flat_map(move |n| sized_dataset(n, kt, d)),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn entropic_scores_lie_in_range((s, t) in pair_strategy(), lambda in 0.0f64..=1.0) {
        let lo = -(t.num_classes() as f64).ln() - 1e-12;
        let cfg = ScoreConfig { lambda, ..exact_cfg() };
        for score in [
            jc_nce(&s, &t, &cfg).unwrap().score,
            ot_nce(&s, &t, &cfg).unwrap().score,
            nce_score(&t.labels().iter().map(|&y| y % 2).collect::<Vec<_>>(), t.labels(), 2, t.num_classes()).unwrap().score,
        ] {
            prop_assert!(score <= 0.0 && score >= lo, "{score} outside [{lo}, 0]");
        }
    }

    #[test]
    fn lambda_one_is_ot_nce_bitwise((s, t) in pair_strategy(), sinkhorn in any::<bool>()) {
        let solver = if sinkhorn { SolverConfig::sinkhorn(0.1) } else { SolverConfig::exact() };
        let cfg = ScoreConfig { solver, lambda: 1.0, ..ScoreConfig::default() };
        let jc = jc_nce(&s, &t, &cfg).unwrap().score;
        let ot = ot_nce(&s, &t, &cfg).unwrap().score;
        prop_assert_eq!(jc.to_bits(), ot.to_bits());
    }

    #[test]
    fn sample_order_does_not_matter((s, t) in pair_strategy(), seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut os: Vec<usize> = (0..s.len()).collect();
        let mut ot: Vec<usize> = (0..t.len()).collect();
        os.shuffle(&mut rng);
        ot.shuffle(&mut rng);
        let (ps, pt) = (permute_rows(&s, &os), permute_rows(&t, &ot));
        let exact = ScoreConfig { lambda, ..exact_cfg() };
        let a = jc_nce(&s, &t, &exact).unwrap().score;
        let b = jc_nce(&ps, &pt, &exact).unwrap().score;
        prop_assert!((a - b).abs() <= 1e-9, "exact: {a} vs {b}");
        let sk = ScoreConfig { lambda, solver: SolverConfig::sinkhorn(0.1), ..ScoreConfig::default() };
        let a = jc_nce(&s, &t, &sk).unwrap().score;
        let b = jc_nce(&ps, &pt, &sk).unwrap().score;
        prop_assert!((a - b).abs() <= 1e-6, "sinkhorn: {a} vs {b}");
    }

    #[test]
    fn target_relabeling_leaves_scores_unchanged((s, t) in pair_strategy(), seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let mut perm: Vec<usize> = (0..t.num_classes()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let r = relabel(&t, &perm);
        let cfg = ScoreConfig { lambda, ..ScoreConfig::default() };
        prop_assert_eq!(jc_nce(&s, &t, &cfg).unwrap().score, jc_nce(&s, &r, &cfg).unwrap().score);
        prop_assert_eq!(ot_nce(&s, &t, &cfg).unwrap().score, ot_nce(&s, &r, &cfg).unwrap().score);
        let z: Vec<usize> = (0..t.len()).map(|i| i % 3).collect();
        prop_assert_eq!(
            nce_score(&z, t.labels(), 3, t.num_classes()).unwrap().score,
            nce_score(&z, r.labels(), 3, r.num_classes()).unwrap().score
        );
        let theta = Array2::from_shape_fn((t.len(), 3), |(i, k)| if k == i % 3 { 0.6 } else { 0.2 });
        let preds = SourcePredictions::new(theta).unwrap();
        prop_assert_eq!(
            leep_score(&preds, t.labels(), t.num_classes()).unwrap().score,
            leep_score(&preds, r.labels(), r.num_classes()).unwrap().score
        );
    }

    #[test]
    fn joint_mass_is_conserved(
        raw in proptest::collection::vec(0.0f64..1.0, 1..=36),
        ks in 1usize..=4,
        kt in 1usize..=4,
    ) {
        let n = (raw.len() as f64).sqrt().floor() as usize;
        prop_assume!(n >= 1 && raw[..n * n].iter().sum::<f64>() > 0.0);
        let plan = Array2::from_shape_vec((n, n), raw[..n * n].to_vec()).unwrap();
        let plan = &plan / plan.sum();
        let sl: Vec<usize> = (0..n).map(|i| i % ks).collect();
        let tl: Vec<usize> = (0..n).map(|i| (i * 7) % kt).collect();
        let jld = joint_label_distribution(&plan, &sl, &tl, ks, kt).unwrap();
        prop_assert!((jld.p().sum() - 1.0).abs() <= 1e-9);
        prop_assert!(jld.p().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn exact_jc_nce_matches_permutation_oracle(
        (s, t) in (2usize..=7, 1usize..=3, 1usize..=3).prop_flat_map(|(n, ks, kt)| {
            (sized_dataset(n, ks.min(n), 2), sized_dataset(n, kt.min(n), 2))
        }),
        lambda in 0.0f64..=1.0,
    ) {
        let n = s.len();
        let ldm = label_wasserstein_matrix(&s, &t, &LabelConfig::default()).unwrap();
        let (fs, ft) = (rows(s.features()), rows(t.features()));
        let cost = |i: usize, j: usize| {
            let sq: f64 = fs[i].iter().zip(&ft[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            lambda * sq + (1.0 - lambda) * ldm.values()[[s.labels()[i], t.labels()[j]]]
        };
        let mut scored: Vec<(f64, f64)> = permutations(n)
            .into_iter()
            .map(|p| {
                let c: f64 = (0..n).map(|i| cost(i, p[i])).sum::<f64>() / n as f64;
                let mut joint = vec![vec![0.0; t.num_classes()]; s.num_classes()];
                for i in 0..n {
                    joint[s.labels()[i]][t.labels()[p[i]]] += 1.0 / n as f64;
                }
                (c, nce_oracle(&joint))
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let best = scored[0].0;
        let optimal: Vec<f64> = scored.iter().take_while(|x| x.0 <= best + 1e-12).map(|x| x.1).collect();
        let got = jc_nce(&s, &t, &ScoreConfig { lambda, ..exact_cfg() }).unwrap().score;
        prop_assert!(
            optimal.iter().any(|o| (o - got).abs() <= 1e-9),
            "got {got}, optimal permutations give {optimal:?}"
        );
    }

    #[test]
    fn ranking_survives_feature_rescaling(
        t in dataset_strategy(16, 3, 2),
        cands in proptest::collection::vec(dataset_strategy(16, 3, 2), 3),
        scale in 0.2f64..5.0,
    ) {
        let scaled = |d: &TaskDataset| {
            TaskDataset::new("x", d.features() * scale, d.labels().to_vec(), d.num_classes()).unwrap()
        };
        let cfg = exact_cfg();
        let base: Vec<f64> = cands.iter().map(|c| jc_nce(c, &t, &cfg).unwrap().score).collect();
        let st = scaled(&t);
        let after: Vec<f64> = cands.iter().map(|c| jc_nce(&scaled(c), &st, &cfg).unwrap().score).collect();
        for (a, b) in base.iter().zip(&after) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }
}
