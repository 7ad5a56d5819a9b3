//! `erf`: simulate data, fit and apply extremal random forests, evaluate
//! predictions, and run the simulation studies.

mod bench;
mod commands;
mod table;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use erf_core::sim::Family;

/// Invalid flag combinations or values detected after parsing; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Parser)]
#[command(name = "erf", version, about = "Extremal random forests for extreme quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from a generative model and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit a model (or cross-validate and fit) and write a model archive.
    Fit(FitArgs),
    /// Predict extreme quantiles at test points.
    Predict(PredictArgs),
    /// Calibration and accuracy of predicted quantiles.
    Eval(EvalArgs),
    /// Run a simulation study.
    Bench(BenchArgs),
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: erf_core::sim::SimError| e.to_string())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Response column; defaults to the last column.
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long, default_value_t = 0.8)]
    pub tau_n: f64,
    /// Minimum leaf size of the weight forest.
    #[arg(long, default_value_t = 40)]
    pub kappa: usize,
    /// Minimum leaf size of the intermediate quantile forest (default: --kappa).
    #[arg(long)]
    pub intermediate_kappa: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2000)]
    pub trees: usize,
    /// Use one forest for intermediate quantiles and weights.
    #[arg(long)]
    pub share_forests: bool,
    /// Cross-validate over these leaf sizes.
    #[arg(long, value_delimiter = ',')]
    pub kappa_grid: Option<Vec<usize>>,
    /// Cross-validate over these penalties.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 50)]
    pub fold_trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    Erf,
    Hill,
    Expshape,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Column of the test file to ignore (a response, if present).
    #[arg(long)]
    pub response: Option<String>,
    /// Target levels, comma separated, each above the model's tau_n.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tau: Vec<f64>,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Erf)]
    pub estimator: EstimatorArg,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output of `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Test data with observed responses, row-aligned with the predictions.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Response column of the test file; defaults to the last column.
    #[arg(long)]
    pub response: Option<String>,
    /// Generative model of the test points, for errors against true quantiles.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<Family>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Experiment {
    #[value(name = "exp1-quantiles")]
    Exp1Quantiles,
    #[value(name = "exp1-dims")]
    Exp1Dims,
    Exp2,
    Exp3,
    Sensitivity,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// Reduced repetitions, test points, and trees.
    #[arg(long)]
    pub desk_scale: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cross-validate leaf size and penalty in every repetition.
    #[arg(long)]
    pub cv: bool,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub test_points: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    /// Training sample size override.
    #[arg(long)]
    pub n: Option<usize>,
    /// Directory for `<experiment>.csv` and `<experiment>.json`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ERF_THREADS") {
        let threads: usize = match v.trim().parse() {
            Ok(t) if t > 0 => t,
            _ => return usage(format!("ERF_THREADS must be a positive integer, got `{v}`")),
        };
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => bench::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
