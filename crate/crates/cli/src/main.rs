//! Batch front-end: run simulations, sweep parameters, and self-check the
//! solvers against brute-force oracles.
//!
//! Exit codes: 0 success, 1 configuration or self-check failure (the message
//! lists every violation), 2 runtime failure.

mod artifacts;
mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "edgegame", version, about = "Edge-cloud LLM prompt-security game simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write stages.csv, report.json, manifest.json.
    Run {
        /// Path to the JSON configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured strategy (none, full, random(p), genetic,
        /// gmdra, gmdra-novdb).
        #[arg(long)]
        strategy: Option<String>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one simulation per value of a swept parameter and write
    /// sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of: players, malicious_send_count, strategy, tpr, u_cost.
        #[arg(long)]
        param: String,
        /// Comma-separated list of values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Verify the exact solver, the budget-prediction rule, and the utility
    /// identity against brute-force oracles on random instances.
    Oracle {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        /// Largest instance size (capped at 14: exhaustive enumeration).
        #[arg(long, default_value_t = 10)]
        max_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately corrupt one comparison to prove the harness reports
        /// counterexamples.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, strategy, seed, out } => {
            commands::run(&config, strategy.as_deref(), seed, &out)
        }
        Command::Sweep { config, param, values, out } => {
            commands::sweep(&config, &param, &values, &out)
        }
        Command::Oracle { instances, max_size, seed, inject_fault } => {
            commands::oracle(instances, max_size, seed, inject_fault)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CmdError::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(commands::CmdError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
