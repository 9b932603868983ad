use jcnce::data::TaskDataset;
use jcnce::harness::{synth_generate, SyntheticSpec};
use jcnce::label::{label_wasserstein_matrix, LabelConfig};
use jcnce::metrics::{
    joint_label_distribution, negative_conditional_entropy, JointLabelDistribution, PairScorer,
    ScoreConfig,
};
use jcnce::ot::{solve, solve_exact, CostMatrix, MarginalWeights, SolverConfig};
use jcnce::Result;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deliberate faults for exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Negates the conditional entropy before the range check.
    EntropySign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn random_cost(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Result<CostMatrix> {
    CostMatrix::new(Array2::from_shape_fn((m, n), |_| rng.random::<f64>()))
}

fn best_assignment(c: &Array2<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
    let n = c.ncols();
    if row == c.nrows() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for j in 0..n {
        if !used[j] {
            used[j] = true;
            best = best.min(c[[row, j]] + best_assignment(c, row + 1, used));
            used[j] = false;
        }
    }
    best
}

fn exact_vs_permutations() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c = random_cost(&mut rng, 5, 5)?;
        let oracle = best_assignment(c.values(), 0, &mut vec![false; 5]) / 5.0;
        let got = solve_exact(&c, &MarginalWeights::uniform(5, 5))?.total_cost();
        worst = worst.max((got - oracle).abs());
    }
    Ok((worst <= 1e-9, format!("max |exact - brute force| = {worst:.2e}")))
}

fn sinkhorn_vs_exact() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let c = random_cost(&mut rng, 6, 6)?;
        let w = MarginalWeights::uniform(6, 6);
        let exact = solve_exact(&c, &w)?.total_cost();
        let approx = solve(&c, &w, &SolverConfig::sinkhorn(0.001))?.total_cost();
        worst = worst.max((approx - exact).abs() / exact);
    }
    Ok((worst <= 0.01, format!("max relative gap = {worst:.2e}")))
}

fn entropy_range(fault: Option<Fault>) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for _ in 0..50 {
        let ks = rng.random_range(1..6);
        let kt = rng.random_range(1..6);
        let raw = Array2::from_shape_fn((ks, kt), |_| rng.random::<f64>());
        let p = &raw / raw.sum();
        let mut nce = negative_conditional_entropy(&JointLabelDistribution::new(p)?);
        if fault == Some(Fault::EntropySign) {
            nce = -nce;
        }
        if !(nce <= 0.0 && nce >= -(kt as f64).ln() - 1e-12) {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{bad} of 50 outside [-ln Kt, 0]")))
}

fn entropy_oracle() -> Result<(bool, String)> {
    let jld = JointLabelDistribution::new(array![[0.4, 0.1], [0.1, 0.4]])?;
    let got = negative_conditional_entropy(&jld);
    let want = 0.8 * 0.8f64.ln() + 0.2 * 0.2f64.ln();
    let diverse = negative_conditional_entropy(&JointLabelDistribution::new(array![[0.25, 0.25], [0.25, 0.25]])?);
    let pass = (got - want).abs() < 1e-12 && (diverse + 2f64.ln()).abs() < 1e-12;
    Ok((pass, format!("NCE = {got:.6}, uniform = {diverse:.6}")))
}

fn small_pair(seed: u64, rho: f64) -> Result<(TaskDataset, TaskDataset)> {
    let spec = SyntheticSpec {
        n: 60,
        n_test: 10,
        rho,
        seed,
        ..SyntheticSpec::default()
    };
    let pair = synth_generate(&spec)?;
    Ok((pair.source, pair.target))
}

fn identity_transfer() -> Result<(bool, String)> {
    let (src, _) = small_pair(4, 0.0)?;
    let mut scorer = PairScorer::new(&src, &src, &ScoreConfig::default())?;
    let score = scorer.jc_nce(0.5)?.score;
    Ok((score.abs() <= 1e-9, format!("JC-NCE(D, D) = {score:.2e}")))
}

fn lambda_one() -> Result<(bool, String)> {
    let (src, tgt) = small_pair(5, 0.4)?;
    let mut scorer = PairScorer::new(&src, &tgt, &ScoreConfig::default())?;
    let jc = scorer.jc_nce(1.0)?.score;
    let ot = scorer.ot_nce()?.score;
    Ok((jc.to_bits() == ot.to_bits(), format!("jc = {jc}, ot = {ot}")))
}

fn label_self_distance() -> Result<(bool, String)> {
    let (src, _) = small_pair(6, 0.0)?;
    let ldm = label_wasserstein_matrix(&src, &src, &LabelConfig::default())?;
    let diag = (0..ldm.dim().0).map(|k| ldm.values()[[k, k]].abs()).fold(0.0, f64::max);
    let off = (0..ldm.dim().0)
        .flat_map(|a| (0..ldm.dim().1).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| ldm.values()[[a, b]])
        .fold(f64::INFINITY, f64::min);
    Ok((diag <= 1e-9 && off > 0.0, format!("max diagonal = {diag:.2e}, min off-diagonal = {off:.3}")))
}

fn coupling_mass() -> Result<(bool, String)> {
    let plan = array![[0.2, 0.05], [0.05, 0.2], [0.25, 0.25]];
    let jld = joint_label_distribution(&plan, &[0, 1, 1], &[0, 1], 2, 2)?;
    let total = jld.p().sum();
    Ok(((total - 1.0).abs() < 1e-12, format!("joint mass = {total}")))
}

/// Runs every embedded check; `fault` deliberately breaks one of them.
pub fn run_selftest(fault: Option<Fault>) -> Vec<CheckResult> {
    vec![
        check("exact-ot-brute-force", exact_vs_permutations()),
        check("sinkhorn-vs-exact", sinkhorn_vs_exact()),
        check("entropy-range", entropy_range(fault)),
        check("entropy-oracle", entropy_oracle()),
        check("joint-mass", coupling_mass()),
        check("identity-transfer", identity_transfer()),
        check("lambda-one-matches-ot-nce", lambda_one()),
        check("label-self-distance", label_self_distance()),
    ]
}
