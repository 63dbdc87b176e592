//! Command-line surface and the experiment harness.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.

mod args;
mod commands;
mod experiment;
mod pipeline;

pub use args::{Cli, Command};
pub use experiment::{
    run_experiment, run_sweep, ArchSpec, EmbedderChoice, ExperimentSpec, ResultsRow, ResultsTable,
    SweepTable, SystemId,
};
pub use pipeline::{build_data, robust_pairs, DataBundle};

use clap::Parser;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

/// Environment variable overriding the experiment cache directory.
pub const CACHE_DIR_ENV: &str = "RFMT_CACHE_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Training(_) => EXIT_TRAINING,
        }
    }
}

macro_rules! data_error_from {
    ($($ty:ty),+) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })+
    };
}

data_error_from!(
    std::io::Error,
    serde_json::Error,
    crate::text::TextError,
    crate::corpus::CorpusError,
    crate::noise::NoiseError,
    crate::model::ModelError,
    crate::model::CheckpointError,
    crate::metrics::MetricError,
    crate::scoring::ScoreError,
    crate::rerank::RerankError
);

impl From<crate::training::TrainError> for CliError {
    fn from(e: crate::training::TrainError) -> Self {
        CliError::Training(e.to_string())
    }
}

/// Entry point for the `rfmt` binary.
pub fn run() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    run_command(&argv)
}

/// Parse and execute one command line; returns the process exit code.
pub fn run_command<S: AsRef<str>>(argv: &[S]) -> i32 {
    let argv: Vec<String> = argv.iter().map(|s| s.as_ref().to_string()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints --help/--version on stdout with success
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
