//! `treecnn`: dataset build, train, eval, cv, sweep and report subcommands.

mod commands;
mod config;
mod grid;
mod live;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use treecnn::init::InitializerKind;
use treecnn::optim::OptimizerKind;

#[derive(Parser, Debug)]
#[command(name = "treecnn", version, about = "Tree-species classification from aerial tiles")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset generation.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train one model and keep the best-validation-loss checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation over the whole dataset.
    Cv(CvArgs),
    /// Train and test every combination of a parameter grid.
    Sweep(SweepArgs),
    /// Merge result tables into one summary.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Clean the inventory, split it and fetch one tile per tree.
    Build(BuildArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[command(flatten)]
    pub common: Common,
    /// Inventory CSV.
    #[arg(long)]
    pub inventory: PathBuf,
    /// Serve tiles from an offline renderer instead of the network.
    #[arg(long)]
    pub mock_tiles: bool,
    /// Number of most frequent species to keep.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Tile size in pixels (square).
    #[arg(long)]
    pub tile_size: Option<u32>,
    #[arg(long)]
    pub zoom: Option<u8>,
    /// Top up every training class with augmented copies.
    #[arg(long)]
    pub oversample: bool,
    /// Images per class after oversampling (default: largest class).
    #[arg(long, requires = "oversample")]
    pub oversample_target: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelFlags {
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of conv blocks (1-6).
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Filters per block, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub filters: Option<Vec<usize>>,
    #[arg(long)]
    pub fc_width: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub initializer: Option<InitializerKind>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// none or balanced.
    #[arg(long, value_parser = grid::parse_weighting)]
    pub class_weighting: Option<treecnn::train::ClassWeighting>,
    /// Enable on-the-fly augmentation with default ranges.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Dataset root (containing manifest.jsonl).
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train, validate or test.
    #[arg(long, default_value = "test")]
    pub split: treecnn::data::Split,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub data: PathBuf,
    /// Axis values, e.g. `blocks=1,2 optimizer=sgd,adamax`.
    #[arg(long, num_args = 1..)]
    pub grid: Vec<String>,
    /// Cross-validate the best N rows afterwards.
    #[arg(long)]
    pub cv_top: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Result CSV files.
    #[arg(required = true)]
    pub tables: Vec<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration discovered after parsing.
    Usage(String),
    Core(treecnn::Error),
}

impl From<treecnn::Error> for Failure {
    fn from(e: treecnn::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(treecnn::Error::MissingApiKey(_)) => 3,
            Failure::Core(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Core(e) => e.kind(),
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();

    let result = match cli.command {
        Command::Dataset(DatasetCommand::Build(a)) => commands::dataset_build(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cv(a) => commands::cv(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = serde_json::json!({ "error": f.kind(), "code": f.exit_code(), "message": f.message() });
            eprintln!("{line}");
            ExitCode::from(f.exit_code())
        }
    }
}
