//! Std companion to `contingent-core`: dataset and checkpoint files, the
//! `contingent` command line, layered configuration and parallel
//! closed-loop evaluation.
//!
//! Every subcommand writes `manifest.json` beside its outputs with the
//! fully resolved configuration, so rerunning with that file as `--config`
//! reproduces the run.

pub mod bench;
pub mod cli;
pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod io;

use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config file or missing inputs. Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Anything that fails after the inputs were accepted. Exit code 3.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(3),
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub(crate) fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
