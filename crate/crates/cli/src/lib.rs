//! Shared pieces of the `ldm` command-line tool: run configuration,
//! dataset materialization, image file formats, and the error taxonomy
//! that maps failures to process exit codes.

use std::fmt;

pub mod config;
pub mod dataset;
pub mod image;

/// Failure taxonomy; the variant decides the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or usage (exit 2).
    Config(String),
    /// Filesystem failure (exit 3).
    Io(String),
    /// Verification checks failed (exit 1).
    Verify(usize),
}

pub type CliResult<T> = Result<T, CliError>;

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Io(msg) => f.write_str(msg),
            CliError::Verify(count) => write!(f, "{count} verification check(s) failed"),
        }
    }
}

impl From<ldm_core::Error> for CliError {
    fn from(err: ldm_core::Error) -> Self {
        match err {
            ldm_core::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
