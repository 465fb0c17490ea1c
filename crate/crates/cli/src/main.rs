//! `tampkit`: data generation, training, evaluation, planning and
//! benchmarking for pick-and-place with a learned feasibility gate.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "tampkit", version, about = "Task and motion planning with a neural feasibility classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample scenes, label them with the oracle and write a dataset file.
    GenData(GenData),
    /// Train the classifier on a dataset file.
    Train(Train),
    /// Score a model on a dataset file.
    Eval(Eval),
    /// Solve one planning problem.
    Solve(Solve),
    /// Run a benchmark.
    Bench(Bench),
    /// Write the two observation channels of a scene body as PGM files.
    Render(Render),
    /// Write the canonical Unpack fixture files.
    Fixtures(Fixtures),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = tampkit::dataset::DEFAULT_COUNT)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Exact neighbor count instead of a random one.
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    /// Probability that a neighbor is placed close to the target.
    #[arg(long)]
    p_near: Option<f64>,
    /// Largest face gap of a close neighbor, meters.
    #[arg(long)]
    near_gap_max: Option<f64>,
}

#[derive(Args)]
struct Split {
    /// Share of the file held out for testing; 0 uses every sample.
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long, default_value_t = 42)]
    split_seed: u64,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f32,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Five comma-separated positive-class weights (px,nx,py,ny,pz).
    #[arg(long, value_delimiter = ',', num_args = 5, conflicts_with = "auto_weights")]
    weights: Option<Vec<f32>>,
    /// Derive the weights from the training labels.
    #[arg(long)]
    auto_weights: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    split: Split,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    beta: f32,
    /// Per-direction confusion counts as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    split: Split,
}

#[derive(Args)]
struct Solve {
    #[arg(long)]
    domain: PathBuf,
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Gate candidate plans with this classifier model.
    #[arg(long, value_name = "MODEL")]
    nfc: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    h_max: usize,
    /// Wall-clock budget, seconds.
    #[arg(long, default_value_t = 120.0)]
    time_budget: f64,
    /// Re-search an exhausted horizon without the gate.
    #[arg(long)]
    nfc_fallback: bool,
    /// Nogood contexts keep the whole state instead of nearby bodies.
    #[arg(long)]
    whole_state: bool,
    /// Result row as CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plan as an s-expression.
    #[arg(long)]
    plan_out: Option<PathBuf>,
    /// Motions as s-expression waypoint lists.
    #[arg(long)]
    motions_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeChoice {
    Both,
    Nfc,
    Plain,
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    Unpack,
}

#[derive(Args)]
struct Bench {
    problem: Problem,
    #[arg(long, default_value_t = 100)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated discretization steps.
    #[arg(long, value_delimiter = ',', default_value = "0.06")]
    steps: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeChoice::Both)]
    modes: ModeChoice,
    /// Classifier model for nfc mode.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long)]
    nfc_fallback: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Render {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct Fixtures {
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Solve(a) => commands::solve(a),
        Command::Bench(a) => commands::bench(a),
        Command::Render(a) => commands::render(a),
        Command::Fixtures(a) => commands::fixtures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
