//! toa-lab: run repeated-detection experiments on tight-binding lattices.
//!
//! Exit status: 0 when every check passes, 1 when a check fails or a run
//! breaks, 2 for usage and configuration errors.

mod compare;
mod error;
mod output;
mod perturb;
mod run;
mod settings;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;
use crate::settings::Settings;

pub struct Outcome {
    pub passed: bool,
}

#[derive(Debug, Parser)]
#[command(name = "toa-lab", version, about = "Time-of-arrival experiments under repeated detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact survival curve: CSV `n,t,x,P` plus JSON sidecar.
    Evolve(Invocation),
    /// Small-τ predictions: CSV `t,x,P_sum,P_integral,P_asymptotic,validity_flags` and a rate table.
    Perturb(Invocation),
    /// Grade one run against the model, regime exponents and plateau; JSON report.
    Compare(Invocation),
    /// Parallel runs over N, τ and initial-state lists, with a collapse summary.
    Sweep(Invocation),
    /// Engine against the dense reference evolution.
    OracleCheck(Invocation),
}

#[derive(Debug, clap::Args)]
struct Invocation {
    /// TOML file (or JSON sidecar) with the same keys as the flags.
    #[arg(long, env = "TOA_LAB_CONFIG")]
    config: Option<PathBuf>,

    #[command(flatten)]
    settings: Settings,
}

impl Invocation {
    fn settings(self) -> CliResult<Settings> {
        match &self.config {
            Some(path) => Ok(self.settings.over(Settings::from_file(path)?)),
            None => Ok(self.settings),
        }
    }
}

fn dispatch(command: Command) -> CliResult<Outcome> {
    match command {
        Command::Evolve(inv) => run::cmd_evolve(&inv.settings()?),
        Command::Perturb(inv) => perturb::cmd_perturb(&inv.settings()?),
        Command::Compare(inv) => compare::cmd_compare(&inv.settings()?),
        Command::Sweep(inv) => sweep::cmd_sweep(&inv.settings()?),
        Command::OracleCheck(inv) => run::cmd_oracle_check(&inv.settings()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome { passed: true }) => ExitCode::SUCCESS,
        Ok(Outcome { passed: false }) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
