//! Library half of the `prefkit` binary: argument surface, run configuration,
//! recipes, and the artifact manifest, kept in a lib target so integration
//! tests can drive them in-process.

use thiserror::Error;

pub mod cli;
pub mod config;
pub mod manifest;
pub mod recipes;

pub use cli::run;

/// Failure classes mapped to exit codes: usage errors exit 1, data errors
/// exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}
