//! Command-line front end: `score`, `compare`, `sweep-lambda`, `synth` and
//! `selftest`.
//!
//! Machine-readable output (JSON lines or CSV) goes to standard output;
//! diagnostics go to standard error. Exit codes: 0 success, 1 selftest
//! failure, 2 argument error, 3 data error, 4 numerical error.

mod selftest;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use jcnce::data::{load_bundle, TaskDataset};
use jcnce::harness::{
    build_suite_entries, build_zoo_entries, compare_pairs, correlate, correlation_suite,
    lambda_sweep, read_pairs_manifest, synth_zoo, write_compare_outputs, write_suite,
    SyntheticSpec, ZooSpec,
};
use jcnce::label::{LabelConfig, LabelDistance};
use jcnce::metrics::{h_score, leep_score, nce_score, Metric, MetricReport, PairScorer, ScoreConfig};
use jcnce::ot::{SolverChoice, SolverConfig};
use jcnce::{Error, ErrorKind, Result};

pub use selftest::{run_selftest, CheckResult, Fault};

pub const EXIT_SELFTEST: i32 = 1;
pub const EXIT_ARGUMENT: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "jcnce", version, about = "Transferability estimation with JC-NCE")]
pub struct Cli {
    /// Worker threads for parallel scoring.
    #[arg(long, global = true, env = "JCNCE_JOBS")]
    pub jobs: Option<usize>,
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one source/target pair; prints one JSON report per metric.
    Score(ScoreCmd),
    /// Score every pair of a manifest and correlate with transfer accuracy.
    Compare(CompareCmd),
    /// JC-NCE over a grid of lambda values, as CSV.
    SweepLambda(SweepCmd),
    /// Generate synthetic bundles with probe-trained accuracies.
    Synth(SynthCmd),
    /// Run the embedded oracle checks.
    Selftest(SelftestCmd),
}

#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    /// Weight of the feature term in the joint ground cost.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// exact, sinkhorn or auto.
    #[arg(long, default_value = "auto")]
    pub solver: SolverChoice,
    /// Sinkhorn regularization relative to the largest cost entry.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Stratified subsample size per dataset.
    #[arg(long, default_value_t = 1000)]
    pub subsample: usize,
    /// Score all samples.
    #[arg(long)]
    pub no_subsample: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label distance: squared (OT cost) or sqrt.
    #[arg(long, default_value = "squared")]
    pub label_dist: LabelDistance,
    /// Per-class sample cap for label distances.
    #[arg(long, default_value_t = 500)]
    pub label_cap: usize,
}

impl ScoringArgs {
    pub fn config(&self) -> Result<ScoreConfig> {
        let cfg = ScoreConfig {
            lambda: self.lambda,
            subsample: (!self.no_subsample).then_some(self.subsample),
            seed: self.seed,
            solver: SolverConfig {
                solver: self.solver,
                epsilon: self.epsilon,
                max_iters: self.max_iters,
                tol: self.tol,
                ..SolverConfig::default()
            },
            label: LabelConfig {
                class_cap: self.label_cap,
                distance: self.label_dist,
                seed: self.seed,
                ..LabelConfig::default()
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ScoreCmd {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// jc-nce, ot-nce, nce, leep, hscore or wd; comma separated or repeated.
    #[arg(long, value_delimiter = ',', default_value = "jc-nce")]
    pub metric: Vec<Metric>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Write the label distance matrix as CSV.
    #[arg(long)]
    pub dump_ldm: Option<PathBuf>,
    /// Write the nonzero entries of the joint-cost coupling as CSV.
    #[arg(long)]
    pub dump_coupling: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareCmd {
    /// CSV with source, target, accuracy and optional log_likelihood, group.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Directory for records.jsonl, correlation.json and correlation.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "jc-nce,ot-nce,nce,leep,hscore,wd"
    )]
    pub metric: Vec<Metric>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Comma-separated lambda values in [0, 1].
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    pub grid: String,
    /// Output CSV path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pairs. With more than one, rho and shift are drawn per pair
    /// from [0, rho-max] and [0, shift-max].
    #[arg(long, default_value_t = 1)]
    pub pairs: usize,
    /// Generate the model-selection zoo instead of independent pairs.
    #[arg(long)]
    pub zoo: bool,
    #[arg(long, default_value_t = 7)]
    pub targets: usize,
    #[arg(long, default_value_t = 15)]
    pub candidates: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Source classes; also the class count of zoo tasks.
    #[arg(long, default_value_t = 4)]
    pub source_classes: usize,
    #[arg(long, default_value_t = 4)]
    pub target_classes: usize,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    /// Centroid scale (default 2 for pairs, 0.8 for the zoo).
    #[arg(long)]
    pub sigma_between: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_within: f64,
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho_max: f64,
    #[arg(long, default_value_t = 4.0)]
    pub shift_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SelftestCmd {
    #[arg(long, hide = true)]
    pub inject_fault: Option<Fault>,
}

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Argument => EXIT_ARGUMENT,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ARGUMENT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("JCNCE_LOG")
        .target(env_logger::Target::Stderr)
        .try_init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return EXIT_ARGUMENT;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_NUMERICAL;
        }
    };
    if matches!(cli.command, Command::Selftest(_)) && cli.verbose == 0 {
        log::set_max_level(log::LevelFilter::Error);
    }
    match pool.install(|| dispatch(&cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32> {
    let mut out = io::stdout().lock();
    match cmd {
        Command::Score(c) => cmd_score(c, &mut out).map(|_| 0),
        Command::Compare(c) => cmd_compare(c, &mut out).map(|_| 0),
        Command::SweepLambda(c) => cmd_sweep_lambda(c, &mut out).map(|_| 0),
        Command::Synth(c) => cmd_synth(c).map(|_| 0),
        Command::Selftest(c) => cmd_selftest(c, &mut out),
    }
}

fn stdout_err(e: io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn load_pair(source: &Path, target: &Path) -> Result<(TaskDataset, TaskDataset, Option<jcnce::data::SourcePredictions>)> {
    let (src, _) = load_bundle(source)?;
    let (tgt, preds) = load_bundle(target)?;
    Ok((src, tgt, preds))
}

pub fn cmd_score(c: &ScoreCmd, out: &mut impl Write) -> Result<()> {
    let cfg = c.scoring.config()?;
    if c.metric.is_empty() {
        return Err(Error::Argument("no metric requested".into()));
    }
    let (src, tgt, preds) = load_pair(&c.source, &c.target)?;
    if preds.is_none() {
        if let Some(m) = c.metric.iter().find(|m| m.needs_predictions()) {
            return Err(Error::Argument(format!(
                "metric {m} needs source predictions, but target bundle {} has no predictions file ({})",
                c.target.display(),
                c.target.join("preds.bin").display()
            )));
        }
    }
    let needs_ot = c.dump_ldm.is_some()
        || c.dump_coupling.is_some()
        || c.metric.iter().any(|m| matches!(m, Metric::JcNce | Metric::OtNce | Metric::Wd));
    let mut scorer = if needs_ot { Some(PairScorer::new(&src, &tgt, &cfg)?) } else { None };
    let mut reports: Vec<MetricReport> = Vec::with_capacity(c.metric.len());
    for &m in &c.metric {
        let report = match m {
            Metric::JcNce => scorer.as_mut().expect("built").jc_nce(cfg.lambda)?,
            Metric::OtNce => scorer.as_ref().expect("built").ot_nce()?,
            Metric::Wd => scorer.as_ref().expect("built").wasserstein_distance()?,
            Metric::Nce => {
                let p = preds.as_ref().expect("checked");
                nce_score(&p.argmax_labels(), tgt.labels(), p.num_classes(), tgt.num_classes())?
            }
            Metric::Leep => leep_score(preds.as_ref().expect("checked"), tgt.labels(), tgt.num_classes())?,
            Metric::HScore => h_score(&tgt)?,
        };
        reports.push(report);
    }
    if let Some(path) = &c.dump_ldm {
        scorer.as_mut().expect("built").label_distances()?.save_csv(path)?;
    }
    if let Some(path) = &c.dump_coupling {
        let coupling = scorer.as_mut().expect("built").joint_coupling(cfg.lambda)?;
        let mut csv = String::from("i,j,mass\n");
        for ((i, j), &v) in coupling.plan().indexed_iter() {
            if v > 0.0 {
                csv.push_str(&format!("{i},{j},{v:?}\n"));
            }
        }
        fs::write(path, csv).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    for r in &reports {
        writeln!(out, "{}", r.to_json_line()).map_err(stdout_err)?;
    }
    Ok(())
}

pub fn cmd_compare(c: &CompareCmd, out: &mut impl Write) -> Result<()> {
    let cfg = c.scoring.config()?;
    let entries = read_pairs_manifest(&c.pairs)?;
    if entries.is_empty() {
        return Err(Error::Argument(format!("{} lists no pairs", c.pairs.display())));
    }
    log::info!("scoring {} pairs", entries.len());
    let records = compare_pairs(&entries, &c.metric, &cfg)?;
    let report = correlate(&records, &c.metric)?;
    write_compare_outputs(&c.out, &records, &report)?;
    let line = serde_json::to_string(&report).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "{line}").map_err(stdout_err)
}

fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    grid.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|l| (0.0..=1.0).contains(l))
                .ok_or_else(|| Error::Argument(format!("lambda {s:?} is not a number in [0, 1]")))
        })
        .collect()
}

pub fn cmd_sweep_lambda(c: &SweepCmd, out: &mut impl Write) -> Result<()> {
    let grid = parse_grid(&c.grid)?;
    let cfg = c.scoring.config()?;
    let (src, tgt, _) = load_pair(&c.source, &c.target)?;
    let reports = lambda_sweep(&src, &tgt, &grid, &cfg)?;
    let mut csv = String::from("lambda,score\n");
    for r in &reports {
        csv.push_str(&format!("{},{}\n", r.lambda.expect("jc-nce report"), r.score));
    }
    match &c.out {
        Some(path) => fs::write(path, csv).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        }),
        None => out.write_all(csv.as_bytes()).map_err(stdout_err),
    }
}

pub fn cmd_synth(c: &SynthCmd) -> Result<()> {
    if c.pairs == 0 {
        return Err(Error::Argument("--pairs must be positive".into()));
    }
    let entries = if c.zoo {
        let defaults = ZooSpec::default();
        let spec = ZooSpec {
            num_targets: c.targets,
            num_candidates: c.candidates,
            dim: c.dim,
            num_classes: c.source_classes,
            n: c.n,
            n_test: c.n_test,
            sigma_between: c.sigma_between.unwrap_or(defaults.sigma_between),
            sigma_within: c.sigma_within,
            seed: c.seed,
        };
        build_zoo_entries(&synth_zoo(&spec)?)?
    } else {
        let spec = SyntheticSpec {
            dim: c.dim,
            num_source_classes: c.source_classes,
            num_target_classes: c.target_classes,
            n: c.n,
            n_test: c.n_test,
            sigma_between: c.sigma_between.unwrap_or(SyntheticSpec::default().sigma_between),
            sigma_within: c.sigma_within,
            shift: c.shift,
            rho: c.rho,
            seed: c.seed,
        };
        spec.validate()?;
        let specs = if c.pairs == 1 {
            vec![spec]
        } else {
            correlation_suite(&spec, c.pairs, c.rho_max, c.shift_max, c.seed)?
        };
        build_suite_entries(&specs)?
    };
    write_suite(&c.out, &entries)?;
    log::info!("wrote {} pairs to {}", entries.len(), c.out.display());
    Ok(())
}

fn cmd_selftest(c: &SelftestCmd, out: &mut impl Write) -> Result<i32> {
    let results = run_selftest(c.inject_fault);
    writeln!(out, "check,status,detail").map_err(stdout_err)?;
    for r in &results {
        let status = if r.passed { "pass" } else { "fail" };
        writeln!(out, "{},{status},\"{}\"", r.name, r.detail.replace('"', "'")).map_err(stdout_err)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("selftest failed: {}", failed.join(", "));
        Ok(EXIT_SELFTEST)
    }
}
