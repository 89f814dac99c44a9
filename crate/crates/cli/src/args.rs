use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "qamatch",
    version,
    about = "Imbalanced semi-supervised classification on precomputed representations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic long-tail dataset.
    Generate(GenerateArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Evaluate a model file on a dataset and print metrics as JSON.
    Eval(EvalArgs),
    /// Aggregate training reports into mean and standard deviation per metric.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable. Applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the resolved config and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// longtail-3, scholarchemqa-shape or agnews-shape.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Rebalance,
    Calibration,
    Softmix,
    Anchor,
}

impl Component {
    pub fn key(self) -> &'static str {
        match self {
            Component::Rebalance => "rebalance",
            Component::Calibration => "calibration",
            Component::Softmix => "softmix",
            Component::Anchor => "anchor",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Directory written by `generate`; sets train_data, and validation_data
    /// and truth when those files exist.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Train on labeled data only.
    #[arg(long)]
    pub supervised_only: bool,
    /// Switch a component off; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<Component>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset file; its labeled records are evaluated.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "parallel")]
    pub exec: qamatch::ExecMode,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Training report files (one per seed).
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}
