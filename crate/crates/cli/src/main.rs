//! `farnet` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use farnet::dataset::Split;
use farnet::trainer::{AblationSuite, Variant};

/// Directory under which run directories are created.
pub const RUN_ROOT_ENV: &str = "FARNET_RUN_ROOT";

#[derive(Parser, Debug)]
#[command(name = "farnet", version, about = "Fourier augmentation reconstruction for domain-generalized fault diagnosis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic multi-domain dataset.
    Synth(SynthArgs),
    /// Window raw f32 recordings into a dataset.
    Convert(ConvertArgs),
    /// Train on source domains and evaluate on a target domain.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Run an ablation suite.
    Ablate(AblateArgs),
    /// Emit amplitude-swapped signals of two domains and their polar spectra.
    PreviewSwap(PreviewArgs),
    /// Per-domain mean spectra and cross-domain distances.
    DomainStats(StatsArgs),
    /// Write recognizer embeddings with labels and domains as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator parameters.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub domains: Option<usize>,
    #[arg(long)]
    pub train_per_cell: Option<usize>,
    #[arg(long)]
    pub test_per_cell: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// JSON conversion spec.
    #[arg(long)]
    pub spec: PathBuf,
    /// Directory the recording paths are relative to (default: the spec's directory).
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Task {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated source domain ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sources: Vec<u32>,
    #[arg(long)]
    pub target: u32,
}

#[derive(Args, Debug)]
pub struct Overrides {
    /// TOML training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seeds trained concurrently (0: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run directory (default: a named directory under $FARNET_RUN_ROOT).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub task: Task,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated domain ids to evaluate on.
    #[arg(long, value_delimiter = ',', required = true)]
    pub domains: Vec<u32>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Directory for metrics.json and confusion.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub task: Task,
    #[command(flatten)]
    pub overrides: Overrides,
    /// modules, lambda-sweep or k-sweep.
    #[arg(long)]
    pub suite: AblationSuite,
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub domain_a: u32,
    #[arg(long)]
    pub domain_b: u32,
    #[arg(long, default_value_t = 0)]
    pub class: usize,
    /// Position of the sample among those of its class, domain and split.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated class ids to include (default: all).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<usize>>,
    /// Restrict to one split (default: both).
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated domain ids (default: all).
    #[arg(long, value_delimiter = ',')]
    pub domains: Option<Vec<u32>>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "UPPER")]
pub enum VariantArg {
    M1,
    M2,
    M3,
    M4,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::M1 => Variant::M1,
            VariantArg::M2 => Variant::M2,
            VariantArg::M3 => Variant::M3,
            VariantArg::M4 => Variant::M4,
        }
    }
}

/// Failure of a subcommand.
#[derive(Debug)]
pub enum CliError {
    /// Arguments that parse but cannot be used together.
    Usage(String),
    Runtime(farnet::Error),
}

impl From<farnet::Error> for CliError {
    fn from(e: farnet::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Convert(a) => commands::convert(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::PreviewSwap(a) => commands::preview_swap(a),
        Command::DomainStats(a) => commands::domain_stats(a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
