//! `aybe-lab`: identity verification sweeps, 1+1 simulations and value
//! probes. Exit codes: 0 pass, 1 numerical failure, 2 usage or config error.

mod args;
mod probe;
mod report;
mod simulate;
mod verify;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure classes mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl From<aybe_lab::LabError> for CliError {
    fn from(e: aybe_lab::LabError) -> Self {
        match e {
            aybe_lab::LabError::Argument(m) => CliError::Usage(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("io: {e}"))
    }
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Verify(a) => verify::run(&a),
        Command::Simulate(a) => simulate::run(&a),
        Command::Probe(a) => probe::run_probe(&a),
        Command::Expand(a) => probe::run_expand(&a),
    };
    match res {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(CliError::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
    }
}
