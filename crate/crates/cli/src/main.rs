//! `petc`: certify, simulate, sweep and monitor periodic event-triggered
//! networked control loops.
//!
//! Exit codes: 0 ok, 1 configuration or I/O error, 2 infeasible
//! certification, 3 runtime certificate violation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "petc", version, about = "Periodic event-triggered networked control toolchain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute admissible sampling bounds and the phi trajectories.
    Certify(Common),
    /// Run the closed loop and write the trace and metrics.
    Simulate(Common),
    /// Monte Carlo sweep over the configured cells.
    Sweep(Common),
    /// Check the Lyapunov certificate along a recorded trace.
    Monitor {
        #[command(flatten)]
        common: Common,
        /// Trace CSV written by `simulate`.
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, conflicts_with_all = ["example", "preset"])]
    pub config: Option<PathBuf>,
    /// Built-in example (1 or 2).
    #[arg(long, value_parser = ["1", "2"], conflicts_with = "preset")]
    pub example: Option<String>,
    /// Built-in preset: example1, example2, table2, table3, sabotage.
    #[arg(long)]
    pub preset: Option<String>,
    /// Master seed; overrides the configured seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for `sweep`.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Certify(c) => commands::certify(c),
        Command::Simulate(c) => commands::simulate(c),
        Command::Sweep(c) => commands::sweep(c),
        Command::Monitor { common, trace } => commands::monitor(common, trace),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
