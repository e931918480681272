//! `sfpn`: dataset generation, training, evaluation, parameter audit,
//! latency benchmark and confidence-map export.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfpn_core::pyramid::Variant;
use sfpn_core::train::TrainConfig;
use sfpn_core::{ErrorClass, OptimizerKind};

#[derive(Parser)]
#[command(name = "sfpn", version, about = "Synthetic fusion pyramid detector toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shapes dataset (PPM images + annotations.json).
    Gen(GenArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint (COCO-style AP).
    Eval(EvalArgs),
    /// Print backbone/neck/head parameter counts.
    Params(ParamsArgs),
    /// Measure single-threaded inference latency.
    Bench(BenchArgs),
    /// Write per-level objectness confidence maps as PGM files.
    Viz(VizArgs),
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Index of the first generated image; lets train and val splits come
    /// from disjoint streams of one seed.
    #[arg(long, default_value_t = 0)]
    pub start: u64,
}

/// Model architecture, from a JSON config or individual flags.
#[derive(Args, Clone)]
pub struct ModelArgs {
    /// Model config JSON; overrides the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "SFPN-3")]
    pub variant: Variant,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 112)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    /// Cosine decay floor.
    #[arg(long, default_value_t = TrainConfig::default().lr_min)]
    pub lr_min: f64,
    #[arg(long, default_value_t = TrainConfig::default().warmup_epochs)]
    pub warmup: usize,
    /// `adam` or `sgd`.
    #[arg(long, default_value_t = TrainConfig::default().optimizer)]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Stop after this many epochs; the schedule still spans `--epochs`.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Continue from the state saved in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Start from these weights (e.g. to fine-tune with `--sol`).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Train the head on every level (fine-tune after attaching SOL outputs).
    #[arg(long)]
    pub sol: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to `config.json` next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub sol: bool,
    #[arg(long, default_value_t = 0.01)]
    pub conf: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nms: f64,
    /// Write the EvalResult JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write detections as JSON lines.
    #[arg(long)]
    pub detections: Option<PathBuf>,
}

#[derive(Args)]
pub struct ParamsArgs {
    /// Only this variant; all three by default.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, default_value_t = 112)]
    pub channels: usize,
    #[arg(long, default_value_t = 80)]
    pub classes: usize,
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Comma-separated variants to sweep.
    #[arg(long, value_delimiter = ',', default_value = "SFPN-3,SFPN-5,SFPN-9")]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    #[arg(long, default_value_t = 112)]
    pub channels: usize,
    #[arg(long, default_value_t = 80)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Benchmark SOL mode too.
    #[arg(long)]
    pub sol: bool,
    /// Append CSV rows here (header written when the file is new).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// PPM image to visualize.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub sol: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Params(a) => commands::params(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Viz(a) => commands::viz(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::BadArgument => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
