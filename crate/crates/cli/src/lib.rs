//! Command-line orchestration for attrleak: run configuration, run
//! directories with checksummed manifests, and CSV/JSON/SVG reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

pub use config::RunConfig;
pub use output::{Command, RunManifest, RunWriter};

use attrleak_core::Error as CoreError;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ATTRLEAK_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::UnsupportedArchitecture(_)
            | CoreError::InvalidArgument(_)
            | CoreError::InfeasibleSplit(_)
            | CoreError::OverlapRequired { .. }
            | CoreError::CsvParse { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
