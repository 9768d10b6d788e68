//! `wzspde`: batch front end for simulations, convergence studies and model
//! validation. Exit codes: 0 success, 1 validation failure or I/O error,
//! 2 configuration error, 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Schema(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Failed(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<wz_spde::Error> for CliError {
    fn from(e: wz_spde::Error) -> Self {
        use wz_spde::Error as E;
        match &e {
            E::Numeric { .. } => CliError::Numeric(e.to_string()),
            E::Path { source, .. } if source.is_numeric() => CliError::Numeric(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Schema(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wzspde", version, about = "Wong-Zakai and exponential Euler schemes for SPDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct CommonArgs {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results do not depend on this
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one trajectory CSV per scheme on a shared Brownian lattice
    Simulate(CommonArgs),
    /// Run a coupled convergence study and fit the rate
    Converge(CommonArgs),
    /// Probe model coefficients, semigroups and moment formulas
    Validate(CommonArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&ExperimentConfig::load(&a.config)?, &a.out),
        Command::Converge(a) => {
            if a.workers == Some(0) {
                return Err(CliError::Schema("--workers must be at least 1".into()));
            }
            commands::converge(&ExperimentConfig::load(&a.config)?, a.workers, &a.out).map(|_| ())
        }
        Command::Validate(a) => {
            let summary = commands::validate(&ExperimentConfig::load(&a.config)?, &a.out)?;
            if summary.passed {
                Ok(())
            } else {
                Err(CliError::Failed("validation failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wzspde: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
