//! Command-line driver: argument parsing, configuration layering and the
//! subcommand implementations.

pub mod args;
mod commands;
pub mod config;

pub use args::Cli;
pub use commands::{run, Manifest, MANIFEST};

use skinaux_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(_) => 1,
        }
    }
}
