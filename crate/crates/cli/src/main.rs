//! `mgsgan`: synthesise, convert, train, evaluate and export spectra.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Core(#[from] mgsgan::Error),
    #[error("{message}")]
    Training { message: String, numeric: bool },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(mgsgan::Error::Contract(_)) => 1,
            CliError::Core(mgsgan::Error::Numeric { .. }) => 3,
            CliError::Training { numeric: true, .. } => 3,
            CliError::Training { numeric: false, .. } => 2,
            CliError::Core(_) | CliError::Io(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mgsgan", version, about = "Mixture-of-generators spectral GAN")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic imbalanced spectral dataset.
    Synth(SynthArgs),
    /// Convert a dataset between CSV and binary.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one run per seed and write checkpoints, logs and a manifest.
    Train(Box<TrainArgs>),
    /// Classification report for trained runs or a checkpoint.
    Eval(EvalArgs),
    /// Per-class mean real and generated spectra with domain bounds.
    ExportSpectra(ExportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub bands: usize,
    /// Samples per class, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    #[arg(long)]
    pub noise: Option<f64>,
    /// `.csv` for CSV, anything else for binary.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Labelled dataset (CSV or binary).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory; one sub-directory per seed.
    #[arg(long, short)]
    pub out: PathBuf,
    /// `key=value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub tttr: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Comma-separated seeds, one run each.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub beta1: Option<String>,
    #[arg(long)]
    pub beta2: Option<String>,
    #[arg(long)]
    pub noise_dim: Option<String>,
    #[arg(long)]
    pub margin: Option<String>,
    #[arg(long)]
    pub prior_mode: Option<String>,
    #[arg(long)]
    pub generator_loss: Option<String>,
    #[arg(long)]
    pub noise_law: Option<String>,
    #[arg(long)]
    pub checkpoint_interval: Option<String>,
    /// Extra `key=value` settings, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub extra: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Training output directory (reads its manifest).
    #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
    pub run: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    /// Test data for `--checkpoint`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Second run directory (with `--run`) or checkpoint (with `--checkpoint`)
    /// for a McNemar comparison.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Shrink |f12 - f21| by one in McNemar's statistic.
    #[arg(long)]
    pub continuity_correction: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Also write the plain-text table.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Real samples to average (usually the run's train split).
    #[arg(long)]
    pub data: PathBuf,
    /// Generated samples per class.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Restrict to one class.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Convert { input, output } => commands::convert(&input, &output),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::ExportSpectra(a) => commands::export_spectra(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
