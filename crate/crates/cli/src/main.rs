//! `esfw` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use esfw::data::ShapeKind;
use esfw::harness::AblationAxis;
use esfw::weaving::MergeSemantics;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "esfw", version, about = "Edge-selective feature weaving for point cloud matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset of point cloud pairs.
    GenData(GenDataArgs),
    /// Train encoder and weaving network jointly.
    Train(TrainArgs),
    /// Evaluate a checkpoint and the rule-based matchers on a dataset.
    Eval(EvalArgs),
    /// Print the correspondences predicted for one pair file.
    Match(MatchArgs),
    /// Check gradients of the full model against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate one model per hyperparameter value.
    Ablate(AblateArgs),
    /// Render a curve, ablation or training-log CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Shape families, cycled through in pair order.
    #[arg(long, value_delimiter = ',', default_value = "sphere")]
    kind: Vec<ShapeKind>,
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Training pairs.
    #[arg(long, default_value_t = 20)]
    pairs: usize,
    /// Held-out pairs, written after the training pairs.
    #[arg(long, default_value_t = 0)]
    test_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of the Gaussian noise added to B.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Non-rigid deformation kernels; 0 generates rigid pairs.
    #[arg(long, default_value_t = 0)]
    deform_kernels: usize,
    #[arg(long, default_value_t = 0.1)]
    deform_magnitude: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 6)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    dg: usize,
    /// Encoder output width.
    #[arg(long, default_value_t = 32)]
    df: usize,
    #[arg(long, default_value = "presence-mean")]
    merge_semantics: MergeSemantics,
    /// Drop the residual shortcuts between weaving layers.
    #[arg(long)]
    no_residual: bool,
    /// Stop gradients through the similarity channel of the first layer.
    #[arg(long)]
    detach_similarity: bool,
}

#[derive(Args, Debug, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use only the row-wise cross-entropy term.
    #[arg(long)]
    row_loss: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Monitor {
    /// Test split when the dataset has one, otherwise the training pairs.
    Auto,
    Train,
    Test,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Pairs scored after every epoch for the log.
    #[arg(long, value_enum, default_value_t = Monitor::Auto)]
    monitor: Monitor,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Tolerance radii as fractions of dist_max, ascending.
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.02,0.03,0.04,0.05,0.06")]
    radii: Vec<f64>,
    /// Directory receiving curves.csv and curves.svg.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pair file as written by gen-data.
    #[arg(long)]
    pair: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    dg: usize,
    #[arg(long, default_value_t = 8)]
    df: usize,
    #[arg(long, default_value = "presence-mean")]
    merge_semantics: MergeSemantics,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Largest relative error that still passes.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    axis: AblationAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Directory receiving ablation.csv and ablation.svg.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Curves, ablation or training-log CSV.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    title: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, esfw::Error::Config(_)) {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
