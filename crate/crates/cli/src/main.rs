//! `wassreg`: simulations, KDE ingestion, distributional regression fits,
//! predictions, geodesics and heat maps from the command line.

mod config;
mod files;
mod geodesic;
mod ingest;
mod manifest;
mod model;
mod render;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "wassreg",
    version,
    about = "Regression of distributions in Wasserstein space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo study of the global and local estimators.
    Simulate(SimulateArgs),
    /// Bin raw observations by predictor and estimate one density per bin.
    Ingest(IngestArgs),
    /// Validate responses and estimator settings into a model directory.
    Fit(FitArgs),
    /// Predict conditional barycenters from a model directory.
    Predict(PredictArgs),
    /// Displacement interpolation between two measures.
    Geodesic(GeodesicArgs),
    /// Render a two-dimensional grid file as a PNG heat map; the run
    /// manifest is written next to the image as `<stem>.manifest.txt`.
    Render(RenderArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    #[value(name = "1d")]
    OneD,
    #[value(name = "2d")]
    TwoD,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub kind: Kind,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key = value file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sample sizes, comma separated [50,100,150,200].
    #[arg(long)]
    pub n: Option<String>,
    /// Monte Carlo runs per sample size [100].
    #[arg(long)]
    pub mc: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Kernel of the local fit: gaussian or epanechnikov [epanechnikov].
    #[arg(long)]
    pub kernel: Option<String>,
    /// Bandwidth of the local fit [0.1].
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Quadrature nodes per unit predictor interval [21].
    #[arg(long)]
    pub points_per_unit: Option<String>,
    /// 1d: quantile levels per curve [201].
    #[arg(long)]
    pub quantile_points: Option<String>,
    /// 2d: grid points per axis [101].
    #[arg(long)]
    pub grid: Option<String>,
    /// 2d: entropic regularization [0.4].
    #[arg(long)]
    pub lambda: Option<String>,
    /// 2d: response family, gaussian or multivariate-t [gaussian].
    #[arg(long)]
    pub family: Option<String>,
    /// 2d: barycenter stopping tolerance [1e-4].
    #[arg(long)]
    pub tolerance: Option<String>,
    /// 2d: also score global extrapolation.
    #[arg(long)]
    pub extrapolation: bool,
    /// 2d: also score the local fit.
    #[arg(long)]
    pub local: bool,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// CSV with header x1,w1[,w2].
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of equal-width predictor bins [20].
    #[arg(long)]
    pub bins: Option<String>,
    /// Predictor range lo,hi [observed range].
    #[arg(long)]
    pub range: Option<String>,
    /// Grid points per axis [51].
    #[arg(long)]
    pub grid: Option<String>,
    /// Grid lower corner, one value per response axis [observed, padded].
    #[arg(long)]
    pub lower: Option<String>,
    /// Grid upper corner.
    #[arg(long)]
    pub upper: Option<String>,
    /// silverman, sheather-jones, or per-axis values [silverman].
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Replace two-dimensional responses (lo, hi) by (lo, hi - lo).
    #[arg(long)]
    pub min_range: bool,
}

#[derive(Args, Debug, Default)]
pub struct EstimatorFlags {
    /// global or local [global].
    #[arg(long)]
    pub mode: Option<String>,
    /// Local kernel: gaussian or epanechnikov [gaussian].
    #[arg(long)]
    pub kernel: Option<String>,
    /// Local bandwidths, one per predictor.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// exact1d or sinkhorn [exact1d on a line, sinkhorn otherwise].
    #[arg(long)]
    pub solver: Option<String>,
    /// Entropic regularization [0.4].
    #[arg(long)]
    pub lambda: Option<String>,
    /// Cost units for lambda: grid or physical [grid].
    #[arg(long)]
    pub units: Option<String>,
    /// Sinkhorn stopping tolerance [1e-6].
    #[arg(long)]
    pub tolerance: Option<String>,
    #[arg(long)]
    pub max_iters: Option<String>,
    /// Quantile levels for the exact solver [201].
    #[arg(long)]
    pub quantile_points: Option<String>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Response list written by `ingest` (x1[,x2...],file).
    #[arg(long)]
    pub responses: PathBuf,
    /// Model directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub estimator: EstimatorFlags,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model directory written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Predictor values. Scalar predictors: comma separated. Vector
    /// predictors: points separated by ';', coordinates by ','.
    #[arg(long, allow_hyphen_values = true)]
    pub x: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write PNG heat maps of two-dimensional predictions.
    #[arg(long)]
    pub render: bool,
    #[command(flatten)]
    pub estimator: EstimatorFlags,
}

#[derive(Args, Debug)]
pub struct GeodesicArgs {
    /// Grid file of the start measure.
    #[arg(long)]
    pub a: PathBuf,
    /// Grid file of the end measure.
    #[arg(long)]
    pub b: PathBuf,
    /// Times, comma separated; values outside [0, 1] extrapolate.
    #[arg(long, allow_hyphen_values = true)]
    pub t: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// auto, exact or sinkhorn [auto].
    #[arg(long)]
    pub coupling: Option<String>,
    /// Entropic regularization for sinkhorn couplings [0.4].
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub render: bool,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Two-dimensional grid file.
    #[arg(long)]
    pub input: PathBuf,
    /// PNG path [input with .png extension].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("WASSREG_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            anyhow::anyhow!("WASSREG_THREADS must be a positive integer, got '{v}'")
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Command::Simulate(args) = &cli.command {
        if let Some(msg) = simulate::flag_conflict(args) {
            let mut cmd = Cli::command();
            cmd.build();
            let sub = cmd
                .find_subcommand_mut("simulate")
                .expect("subcommand exists");
            sub.error(clap::error::ErrorKind::ArgumentConflict, msg)
                .exit();
        }
    }
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Ingest(a) => ingest::run(a),
        Command::Fit(a) => model::fit(a),
        Command::Predict(a) => model::predict(a),
        Command::Geodesic(a) => geodesic::run(a),
        Command::Render(a) => render::run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
