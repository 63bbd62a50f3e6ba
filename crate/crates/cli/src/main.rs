//! Command-line entry point: `generate`, `train`, `evaluate`, `cv` and
//! `interpret` wired into reproducible runs. Every command writes its
//! outputs under `--outdir`, including a manifest that doubles as a config
//! file reproducing the run.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad flags, config or
//! input files), 2 on runtime failures.

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<trip_core::Error> for CliError {
    fn from(e: trip_core::Error) -> Self {
        use trip_core::Error::*;
        match e {
            ShapeMismatch(_) | ModeOutOfRange { .. } | InvalidArgument(_) | Parse { .. } => {
                CliError::Validation(e.to_string())
            }
            SvdNoConvergence { .. } | RankDeficient { .. } | NonFinite(_) | Io { .. } => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GenerateKind {
    Spiral,
    Rand1,
    Rand2,
    Rand3,
}

#[derive(Parser)]
#[command(
    name = "trip",
    version,
    about = "Orthonormal tensor projections learned jointly with a nonlinear head"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an artificial dataset and its manifest.
    Generate {
        /// Dataset family to generate.
        #[arg(long, value_enum)]
        kind: GenerateKind,
        /// Master seed; the whole dataset is a pure function of it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample count for the random tensor families.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Non-zero entries per sample for the random tensor families.
        #[arg(long, default_value_t = 100)]
        nnz: usize,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override config keys, e.g. --set lambda=0.01
        #[arg(long = "set")]
        sets: Vec<String>,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Evaluate a saved model on a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Task for CSV data (sparse files carry it in the header).
        #[arg(long)]
        task: Option<String>,
        /// Response column name for CSV data.
        #[arg(long)]
        response: Option<String>,
        /// Normalization statistics written by `train` (norm_stats.csv).
        #[arg(long)]
        norm_stats: Option<PathBuf>,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Repeated k-fold cross validation, optionally over a parameter grid.
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        sets: Vec<String>,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Rotated coordinates, surrogates, local coefficients and a decision
    /// grid for a trained model.
    Interpret {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        response: Option<String>,
        #[arg(long)]
        norm_stats: Option<PathBuf>,
        /// Locality kernel width for the local coefficients.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Two rotated-coordinate indices to scan, e.g. 0,1
        #[arg(long, default_value = "0,1")]
        grid_axes: String,
        #[arg(long, default_value_t = 25)]
        grid_resolution: usize,
        /// min1,max1,min2,max2 (defaults to the data range with 10% padding)
        #[arg(long)]
        grid_bounds: Option<String>,
        #[arg(long)]
        outdir: PathBuf,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{e}");
            return 1;
        }
    };
    let result = match cli.command {
        Command::Generate {
            kind,
            seed,
            samples,
            nnz,
            outdir,
        } => commands::generate(kind, seed, samples, nnz, &outdir),
        Command::Train {
            config,
            sets,
            outdir,
        } => commands::train(&config, &sets, &outdir),
        Command::Evaluate {
            model,
            data,
            task,
            response,
            norm_stats,
            outdir,
        } => commands::evaluate(
            &model,
            &data,
            task.as_deref(),
            response.as_deref(),
            norm_stats.as_deref(),
            &outdir,
        ),
        Command::Cv {
            config,
            sets,
            outdir,
        } => commands::cross_validate(&config, &sets, &outdir),
        Command::Interpret {
            model,
            data,
            task,
            response,
            norm_stats,
            sigma,
            grid_axes,
            grid_resolution,
            grid_bounds,
            outdir,
        } => commands::interpret(commands::InterpretArgs {
            model: &model,
            data: &data,
            task: task.as_deref(),
            response: response.as_deref(),
            norm_stats: norm_stats.as_deref(),
            sigma,
            grid_axes: &grid_axes,
            grid_resolution,
            grid_bounds: grid_bounds.as_deref(),
            outdir: &outdir,
        }),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}
