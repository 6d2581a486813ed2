use std::path::PathBuf;

use causaltab::causal::NotearsMode;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "causaltab", version, about = "Causally regularized diffusion for mixed-type tables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a DAG over the table's columns and write its adjacency, edges and mask.
    Discover(DiscoverArgs),
    /// Train a denoiser and write the checkpoint, training log and data splits.
    Train(TrainArgs),
    /// Generate rows from a checkpoint.
    Sample(SampleArgs),
    /// Score a synthetic table against real data.
    Evaluate(EvaluateArgs),
    /// Discover, train, sample and evaluate in one run.
    Pipeline(PipelineArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Discover(_) => "discover",
            Command::Train(_) => "train",
            Command::Sample(_) => "sample",
            Command::Evaluate(_) => "evaluate",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema JSON describing column kinds and categories.
    #[arg(long)]
    pub schema: PathBuf,
}

/// Flags shared by `train` and `pipeline`. Each one overrides the config file.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// JSON file with training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "linear|nonlinear|off")]
    pub notears: Option<NotearsMode>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "w-max")]
    pub w_max: Option<f64>,
    /// Fixed penalty multiplier in place of the adaptive weight.
    #[arg(long, value_name = "LAMBDA")]
    pub fcr: Option<f64>,
    #[arg(long = "no-cross-pairs")]
    pub no_cross_pairs: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Reverse-process steps stored with the checkpoint.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub table: TableArgs,
    #[arg(long, default_value = "nonlinear", value_name = "linear|nonlinear")]
    pub mode: NotearsMode,
    #[arg(long, default_value_t = 0.3)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub table: TableArgs,
    /// Edge-list JSON used instead of running discovery.
    #[arg(long = "causal-graph", conflicts_with = "notears")]
    pub causal_graph: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the checkpoint's reverse-process step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synth: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Rule list JSON for violation counting.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Training rows, for the privacy metric.
    #[arg(long, requires = "holdout")]
    pub train: Option<PathBuf>,
    /// Rows unseen in training, for privacy and utility.
    #[arg(long, requires = "train")]
    pub holdout: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Report JSON; histograms go to a `histograms/` directory beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub table: TableArgs,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Rows to generate; defaults to the training split size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
