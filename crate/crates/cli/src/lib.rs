//! Command line front end: synthetic data generation, training,
//! single-image decomposition and evaluation. Every command writes a
//! [`RunManifest`] into its output directory.

mod decompose;
pub mod error;
mod evaluate;
mod generate;
pub mod manifest;
mod plot;
mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use intrinsic_core::trainer::Mode;
use serde::Serialize;

pub use decompose::cmd_decompose;
pub use error::{diagnostic, CliError, Result};
pub use evaluate::{cmd_evaluate, REPORT_JSON, REPORT_TEXT};
pub use generate::cmd_generate_data;
pub use manifest::{RunManifest, RUN_MANIFEST_FILE};
pub use train::{
    cmd_train, latest_checkpoint, resolve_model_dir, CHECKPOINT_DIR, LOSS_CSV, LOSS_PLOT,
};

#[derive(Debug, Parser)]
#[command(
    name = "intrinsic",
    version,
    about = "Unsupervised reflectance/shading decomposition"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset of Lambertian scenes.
    GenerateData(GenerateArgs),
    /// Train a model on the unpaired collections of a dataset.
    Train(TrainArgs),
    /// Split one image into reflectance and shading.
    Decompose(DecomposeArgs),
    /// Score a model on the paired ground truth of a dataset.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub scenes: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Settings come from the defaults, then the config file, then the flags
/// below, each overriding the previous.
#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset root holding `input/`, `reflectance/` and `shading/`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with `[data]`, `[net]`, `[train]` and `[weights]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep at most this many images of each collection.
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// `standard` or `iiw_smoothness`.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the latest checkpoint under `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct DecomposeArgs {
    /// A model directory, a checkpoint, or a training output directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// A model directory, a checkpoint, or a training output directory.
    #[arg(long, required_unless_present = "gt_as_prediction")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset root holding `gt/`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Score the ground truth itself instead of a model; every metric is 0.
    #[arg(long)]
    pub gt_as_prediction: bool,
    #[arg(long, default_value_t = 500)]
    pub judgments: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<RunManifest> {
    match cli.command {
        Command::GenerateData(a) => cmd_generate_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

pub(crate) fn create_dir(dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
