//! `exdiff`: build and validate combination policies, run the diffusion
//! solvers, sweep stability and generate networks.
//!
//! Exit codes: 0 on success (divergence and instability are findings),
//! 1 when inputs are rejected, 2 on usage errors.

mod config;
mod error;
mod net;
mod policy;
mod solve;
mod stability;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "exdiff", version, about = "Exact diffusion experiments over left-stochastic policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build or load a combination policy and validate it.
    Policy(policy::PolicyArgs),
    /// Run solvers and write relative-error CSVs.
    Solve(solve::SolveArgs),
    /// Spectral-radius sweeps and the Jury test.
    Stability(stability::StabilityArgs),
    /// Network utilities.
    #[command(subcommand)]
    Net(net::NetCommand),
}

fn dispatch(command: Command) -> CliResult<bool> {
    match command {
        Command::Policy(args) => policy::run(args),
        Command::Solve(args) => solve::run(args).map(|()| true),
        Command::Stability(args) => stability::run(args).map(|()| true),
        Command::Net(command) => net::run(command).map(|()| true),
    }
}

fn main() -> ExitCode {
    // Clap exits with 2 on bad flags and 0 for --help.
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}
