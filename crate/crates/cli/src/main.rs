//! `sgbp`: temperature sweeps, stability scans, disorder ensembles and
//! structural checks for region-graph message passing on spin lattices.
//!
//! Exit codes: 0 success, 1 runtime or numeric failure, 2 usage error.

mod commands;
mod options;

use std::process::ExitCode;

use clap::Parser;

use options::{Cli, Command};

/// Worker count for grid points and disorder instances.
const WORKERS_ENV: &str = "SGBP_WORKERS";

fn init_pool() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{WORKERS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Sweep(args) => commands::sweep(args),
        Command::Stability(args) => commands::stability(args),
        Command::Ea3d(args) => commands::ea3d(args),
        Command::Validate(args) => commands::validate(args),
        Command::Oracle(args) => commands::oracle(args),
    };
    match result {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
