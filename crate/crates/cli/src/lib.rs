//! Command-line front end: reads a JSON run configuration, dispatches to the
//! verification suites, the cost classifier, the continuation solver, the
//! c-transform and the post-hoc diagnostics, and writes JSON and CSV reports.
//!
//! Exit codes: 0 when every check passes, 1 on a numeric failure, 2 on a
//! configuration or output error.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use qtransport::solver::GridSize;

use crate::config::{parse_grid, RunConfig};
use crate::output::OutputDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("output error: {0}")]
    Output(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 2,
            CliError::Numeric(_) => 1,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the randomized property suites.
    Verify,
    /// Classify the configured cost by sampling its MTW contraction.
    Classify,
    /// Solve the configured boundary value problem by continuation.
    Solve,
    /// Evaluate the c-transform seed on the source grid.
    Transform,
    /// Run the diagnostics on a saved field.
    Diagnose,
}

#[derive(Debug, Parser)]
#[command(name = "qtransport", version, about = "Hessian-quotient transport solver and verification suites")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration. Optional for `verify`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed of the random generator; overrides `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Grid size as NRxNT; overrides `grid` from the configuration.
    #[arg(long, global = true, value_parser = parse_grid)]
    pub grid: Option<GridSize>,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Command::Verify) => RunConfig::default(),
        (None, _) => return Err(CliError::Config("--config is required for this command".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(grid) = cli.grid {
        cfg.grid = Some(grid);
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    let cfg = load(cli)?;
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut out = OutputDir::create(&root)?;
    match cli.command {
        Command::Verify => commands::verify(&cfg, &mut out),
        Command::Classify => commands::classify(&cfg, &mut out),
        Command::Solve => commands::solve(&cfg, &mut out),
        Command::Transform => commands::transform(&cfg, &mut out),
        Command::Diagnose => commands::diagnose(&cfg, &mut out),
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
