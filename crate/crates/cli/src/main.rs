//! `yieldnet` command-line entry point.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use yieldnet::data::{Crop, DataError};
use yieldnet::experiments::{ExperimentError, ModelKind, Source};
use yieldnet::model::ModelError;

use settings::{List, Span, Weeks};

/// A failure with its process exit status: 1 for usage and contract
/// violations, 2 for file access and parsing.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Model(ModelError::Format(_)) => 2,
            e if e.is_io() => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = if e.is_io() { 2 } else { 1 };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser, Debug)]
#[command(name = "yieldnet", version, about = "Crop-yield forecasting with a hybrid CNN-RNN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic data directory with causal metadata.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        /// Output data directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        counties: Option<usize>,
        #[arg(long)]
        states: Option<usize>,
        /// Inclusive year range, e.g. 1980:2000.
        #[arg(long)]
        years: Option<Span<i32>>,
        #[arg(long)]
        crop: Option<Crop>,
    },
    /// Train on the years before --year and save the model.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        model: Option<ModelKind>,
        /// Validation year; training uses the years before it.
        #[arg(long)]
        year: Option<i32>,
        /// Where to write the trained model.
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// Optional directory for metrics, predictions and the loss curve.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a saved model at --year.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model_file: Option<PathBuf>,
        #[arg(long)]
        year: Option<i32>,
        /// History length for non-sequence models.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Guided-backpropagation feature importance of a saved CNN-RNN.
    Attribute {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model_file: Option<PathBuf>,
        #[arg(long)]
        year: Option<i32>,
        /// lstm-output or head.
        #[arg(long)]
        attribution_source: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment protocol.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Per-year yield mean, standard deviation and count.
    Summarize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        years: Option<Span<i32>>,
        /// Optional CSV output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum Experiment {
    /// Train on the years before --year and validate at it.
    Holdout {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Leave-location-out cross-validation at --year.
    Cv {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Single-source CNN-RNN arms, e.g. --sources W,S,M,AVG.
    Ablation {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        sources: Option<List<Source>>,
    },
    /// Retrain on the top fractions of features ranked by attribution.
    Subset {
        #[command(flatten)]
        run: RunArgs,
        /// Year used to rank features; defaults to the year before --year.
        #[arg(long)]
        select_year: Option<i32>,
        #[arg(long)]
        fractions: Option<List<f64>>,
    },
    /// Replace window weeks with prior-year weather and restore them in steps.
    WeatherSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Window as A:B or a comma list; default 22:39.
        #[arg(long)]
        weeks: Option<Weeks>,
        #[arg(long)]
        step: Option<usize>,
        /// Sweep a saved CNN-RNN instead of training one.
        #[arg(long)]
        model_file: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` file whose keys mirror the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads; falls back to YIELDNET_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Data directory with the five CSV tables.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub crop: Option<Crop>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct FitArgs {
    /// Years of history per sample.
    #[arg(long)]
    pub k: Option<usize>,
    /// Training iterations.
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub halve_every: Option<u64>,
    /// Loss-curve interval in iterations.
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Average the loss over every unrolled year.
    #[arg(long)]
    pub all_step_loss: Option<bool>,
    /// Candidate LASSO penalties, comma separated.
    #[arg(long)]
    pub lambdas: Option<List<f64>>,
    /// Random-forest size.
    #[arg(long)]
    pub trees: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Target year.
    #[arg(long)]
    pub year: Option<i32>,
    /// lstm-output or head.
    #[arg(long)]
    pub attribution_source: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
