use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shiftweigh::estimators::EstimatorKind;

#[derive(Debug, Parser)]
#[command(name = "shiftweigh", version, about = "Covariate-shift mean estimation with kernel mean matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for KMM weights on the training rows.
    Weights(WeightsArgs),
    /// Estimate the test-set label mean.
    Estimate(EstimateArgs),
    /// Evaluate a finite-sample confidence bound.
    Bound(BoundArgs),
    /// Run a Monte-Carlo experiment on a builtin scenario.
    Experiment(ExperimentArgs),
    /// Rank classifiers by their estimated test risk.
    Rank(RankArgs),
    /// Write a seeded sample of a builtin scenario as train/test CSV files.
    Export(ExportArgs),
    /// List the builtin scenarios with their ground truth.
    Scenarios,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Stopping tolerance on the projected-gradient residual.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Iteration cap; defaults to 50 n + 10000.
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Kernel as inline JSON or a path to a JSON file.
    #[arg(long)]
    pub kernel: String,
    /// Upper bound on the weights.
    #[arg(long = "B")]
    pub b: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Weights CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON destination; stdout when `--out` is given and this is absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Kmm,
    Plugin,
    #[value(alias = "kde_ratio")]
    Kde,
    Oracle,
}

impl From<EstimatorArg> for EstimatorKind {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Kmm => EstimatorKind::Kmm,
            EstimatorArg::Plugin => EstimatorKind::Plugin,
            EstimatorArg::Kde => EstimatorKind::KdeRatio,
            EstimatorArg::Oracle => EstimatorKind::Oracle,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Training CSV with a `y` column (and `beta_true` for the oracle).
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Kmm)]
    pub estimator: EstimatorArg,
    /// Kernel as inline JSON or a path; required for kmm and plugin.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Weight bound; required for kmm and kde, defaults to max(1, max beta_true) for oracle.
    #[arg(long = "B")]
    pub b: Option<f64>,
    /// Plug-in ridge parameter; defaults to n_tr^(-2/3).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Declared label range `lo,hi` for labels outside [0, 1].
    #[arg(long = "label-range", value_parser = parse_range)]
    pub label_range: Option<(f64, f64)>,
    /// KDE bandwidths; Silverman's rule when absent.
    #[arg(long = "bandwidth-train")]
    pub bandwidth_train: Option<f64>,
    #[arg(long = "bandwidth-test")]
    pub bandwidth_test: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum RegimeArg {
    InRkhs,
    PolyApprox,
    LogApprox,
    PluginPoly,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Full bound inputs as inline JSON or a path; replaces the other flags.
    #[arg(long, conflicts_with_all = ["regime", "b", "c", "delta", "n_tr", "n_te"])]
    pub inputs: Option<String>,
    #[arg(long, value_enum, required_unless_present = "inputs")]
    pub regime: Option<RegimeArg>,
    #[arg(long = "B", required_unless_present = "inputs")]
    pub b: Option<f64>,
    /// Kernel sup constant, `k(x, x) <= C^2`.
    #[arg(long = "C", required_unless_present = "inputs")]
    pub c: Option<f64>,
    #[arg(long, required_unless_present = "inputs")]
    pub delta: Option<f64>,
    #[arg(long = "n-tr", required_unless_present = "inputs")]
    pub n_tr: Option<u64>,
    #[arg(long = "n-te", required_unless_present = "inputs")]
    pub n_te: Option<u64>,
    #[arg(long = "norm-m")]
    pub norm_m: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long = "c-inf")]
    pub c_inf: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub scenario: String,
    /// Estimators to run on shared samples.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "kmm")]
    pub estimator: Vec<EstimatorArg>,
    #[arg(long = "n-grid", value_delimiter = ',', default_value = "250,500,1000,2000,4000")]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    /// Test sample size; defaults to 10 max(n-grid).
    #[arg(long = "n-te")]
    pub n_te: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 runs inline. All cores when absent.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Confidence level for the coverage summary.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Weight bound; defaults to the scenario's true sup of the density ratio.
    #[arg(long = "B")]
    pub b: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Kernel override as inline JSON or a path.
    #[arg(long)]
    pub kernel: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Record per-trial wall time (makes trials.csv non-reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Training features; `loss_*` columns are read from here unless `--losses` is given.
    #[arg(long)]
    pub train: PathBuf,
    /// CSV whose `loss_*` columns hold per-row losses, one column per classifier.
    #[arg(long)]
    pub losses: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub kernel: String,
    #[arg(long = "B")]
    pub b: f64,
    #[arg(long = "label-range", value_parser = parse_range)]
    pub label_range: Option<(f64, f64)>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long = "n-tr")]
    pub n_tr: usize,
    #[arg(long = "n-te")]
    pub n_te: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for train.csv and test.csv.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected 'lo,hi', got '{s}'"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("cannot parse '{lo}'"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("cannot parse '{hi}'"))?;
    Ok((lo, hi))
}
