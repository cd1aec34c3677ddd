//! `aacrc`: simulate data, embed records with a random forest, calibrate
//! adaptive thresholds and evaluate them.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 a fit whose
//! stationarity residual exceeds its tolerance.

mod commands;
mod config;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use aacrc_core::sim::TaskKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "aacrc", version, about = "Automatically adaptive conformal risk control")]
struct Cli {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Train a random forest on absolute residuals and write leaf embeddings.
    RfEmbed(RfEmbedArgs),
    /// Fit per-record thresholds on a calibration set.
    Calibrate(CalibrateArgs),
    /// Score thresholds against ground truth, or run a full repeated-split experiment.
    Evaluate(EvaluateArgs),
    /// Inspect run configurations.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Regression,
    Segmentation,
}

impl From<Task> for TaskKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Regression => TaskKind::Regression,
            Task::Segmentation => TaskKind::Segmentation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassKind {
    Intercept,
    Groups,
    Embedding,
    RfLeaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SegFormat {
    Bin,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Crc,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    pub task: Task,
    /// Number of regression records.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of segmentation images.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset; defaults to a file in the configured data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the segmentation embedding here.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SegFormat::Bin)]
    pub format: SegFormat,
}

#[derive(Debug, Args)]
pub struct RfEmbedArgs {
    /// Record CSV with feature columns and `abs_residual` (or `y` and `f_hat`).
    #[arg(long, required_unless_present = "load_model", conflicts_with = "load_model")]
    pub residual: Option<PathBuf>,
    /// Reuse a saved model instead of training.
    #[arg(long)]
    pub load_model: Option<PathBuf>,
    /// Where to save the trained model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Input record CSV and output embedding file; repeatable.
    #[arg(long, num_args = 2, value_names = ["RECORDS", "EMBEDDING"])]
    pub embed: Vec<PathBuf>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub feature_fraction: Option<f64>,
    #[arg(long)]
    pub no_bootstrap: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// Calibration records (regression CSV) or images (container or CSV).
    #[arg(long)]
    pub calibration: PathBuf,
    /// Test records or images; only their ids and raw features are used.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub calibration_embedding: Option<PathBuf>,
    #[arg(long)]
    pub test_embedding: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub function_class: Option<ClassKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Ridge strength; 0 disables the regularizer.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Write the marginal CRC threshold instead of adaptive ones.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threshold CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Certificate CSV.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// Run the configured repeated-split experiment instead of scoring files.
    #[arg(long, conflicts_with_all = ["test", "thresholds", "baseline"])]
    pub experiment: bool,
    /// Test records or images with ground truth.
    #[arg(long, required_unless_present = "experiment")]
    pub test: Option<PathBuf>,
    /// AA-CRC threshold CSV.
    #[arg(long, required_unless_present = "experiment")]
    pub thresholds: Option<PathBuf>,
    /// Marginal CRC threshold CSV for paired columns.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub reference_threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Recall-bin table (segmentation).
    #[arg(long)]
    pub bins_csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print the full default configuration.
    DumpDefaults {
        #[arg(long, value_enum, default_value_t = Task::Regression)]
        task: Task,
    },
    /// Check a configuration file and print it with defaults filled in.
    Validate { file: PathBuf },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Config { action } => match action {
            ConfigAction::DumpDefaults { task } => commands::config::dump_defaults(task.into()),
            ConfigAction::Validate { file } => commands::config::validate(&file),
        },
        command => {
            let task = match &command {
                Command::Simulate(a) => Some(a.task),
                Command::Calibrate(a) => a.task,
                Command::Evaluate(a) => a.task,
                _ => None,
            };
            let mut config = config::RunConfig::resolve(cli.config.as_deref(), task.map(Into::into))?;
            if cli.threads.is_some() {
                config.threads = cli.threads;
            }
            config.validate()?;
            if let Some(n) = config.threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
            match command {
                Command::Simulate(a) => commands::simulate::run(&a, config),
                Command::RfEmbed(a) => commands::rf_embed::run(&a, config),
                Command::Calibrate(a) => commands::calibrate::run(&a, config),
                Command::Evaluate(a) => commands::evaluate::run(&a, config),
                Command::Config { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aacrc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
