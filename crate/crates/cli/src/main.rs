//! `assort`: drive the contextual assortment bandit from the command line.
//!
//! Subcommands cover the full workflow: `simulate` runs replicated
//! episodes and writes traces, `solve` answers one saved per-period
//! subproblem, `quality` audits the swap solver against enumeration,
//! `verify` runs the built-in invariant suites, and `oracle-check` prints
//! instance diagnostics.
//!
//! Exit codes: 0 on success, 1 for usage, configuration, and I/O errors,
//! 2 when an invariant suite or audit fails.

mod commands;
mod config;
mod verify;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::Outcome;

#[derive(Parser)]
#[command(
    name = "assort",
    version,
    about = "Contextual assortment bandit: simulation, solvers, and self-checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated bandit episodes and write trace and aggregate files.
    Simulate(commands::SimulateArgs),
    /// Solve one saved per-period subproblem and print the result.
    Solve(commands::SolveArgs),
    /// Tabulate solver-versus-enumeration gap statistics by horizon.
    Quality(commands::QualityArgs),
    /// Run the built-in invariant suites.
    Verify(verify::VerifyArgs),
    /// Print instance diagnostics and audit the per-period solver.
    OracleCheck(commands::OracleCheckArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap exits with 2 by default; this tool reserves 2 for failed
            // invariant suites, so usage errors map to 1.
            let code = match err.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Solve(args) => commands::solve(args),
        Command::Quality(args) => commands::quality(args),
        Command::Verify(args) => verify::verify(args),
        Command::OracleCheck(args) => commands::oracle_check(args),
    };
    match outcome {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::InvariantFailure) => ExitCode::from(2),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
