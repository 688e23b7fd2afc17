//! `bcrl`: generate samples, estimate dynamics, solve, simulate and compare.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Axes;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "bcrl",
    version,
    about = "Offline RL for behavior-change studies from generated samples"
)]
struct Cli {
    /// Run configuration (TOML); flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run (or resume) a sample-generation campaign.
    Generate(commands::GenerateArgs),
    /// Estimate dynamics (or a baseline) from samples.
    Estimate(commands::EstimateArgs),
    /// Derive a policy from estimated dynamics.
    Solve(commands::SolveArgs),
    /// Simulate policies on ground-truth dynamics.
    Simulate(commands::SimulateArgs),
    /// L1 errors of sample sources against reference dynamics across sample counts.
    Sweep(commands::SweepArgs),
    /// Policy-performance and dynamics-accuracy reports for a set of sources.
    Report(commands::ReportArgs),
    /// Import samples from CSV into a JSONL store.
    Ingest(commands::IngestArgs),
    /// Export a JSONL store to CSV.
    Export(commands::ExportArgs),
}

impl Command {
    fn axes(&self) -> &Axes {
        match self {
            Command::Generate(a) => &a.axes,
            Command::Estimate(a) => &a.axes,
            Command::Solve(a) => &a.axes,
            Command::Simulate(a) => &a.axes,
            Command::Sweep(a) => &a.axes,
            Command::Report(a) => &a.axes,
            Command::Ingest(a) => &a.axes,
            Command::Export(a) => &a.axes,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = config::Config::load_or_default(cli.config.as_deref())?;
    cfg.apply(cli.command.axes());
    match cli.command {
        Command::Generate(a) => commands::generate(&cfg, &a),
        Command::Estimate(a) => commands::estimate(&cfg, &a),
        Command::Solve(a) => commands::solve(&cfg, &a),
        Command::Simulate(a) => commands::simulate(&cfg, &a),
        Command::Sweep(a) => commands::sweep(&cfg, &a),
        Command::Report(a) => commands::report(&cfg, &a),
        Command::Ingest(a) => commands::ingest(&cfg, &a),
        Command::Export(a) => commands::export(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
