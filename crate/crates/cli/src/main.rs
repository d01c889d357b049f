//! `gtrend`: generate fleets, build graphs, train, decompose and evaluate.
//!
//! Machine-readable results go to stdout as JSON, logs to stderr. Exit codes:
//! 0 on success, 2 on invalid input or config, 3 on numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gtrend_core::synth_fleet::DegradationCase;

use config::{ConfigError, RunConfig};

/// Seed streams fanned out from `--seed`.
pub const STREAM_DATA: u64 = 0;
pub const STREAM_MODEL: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_BENCH: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "gtrend", version, about = "Fleet-level trend decomposition of sensor timeseries")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic fleet and its ground-truth degradation pattern.
    Generate(commands::GenerateArgs),
    /// Build the fleet graph from a fleet CSV and write it as an edge list.
    BuildGraph(commands::BuildGraphArgs),
    /// Train a model and write a checkpoint, training log and timing report.
    Train(commands::TrainArgs),
    /// Split a fleet into aging and fluctuation terms with a trained checkpoint.
    Decompose(commands::DecomposeArgs),
    /// Performance loss rate per node from an aging-term CSV.
    Plr(commands::PlrArgs),
    /// Compare an estimated degradation pattern with the real one.
    Evaluate(commands::EvaluateArgs),
    /// Time training across worker counts.
    Benchmark(commands::BenchmarkArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gtrend_core::Error>() {
            return if e.is_numeric() { 3 } else { 2 };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    let mut config = RunConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.global.out {
        config.out = out.clone();
    }
    match cli.command {
        Command::Generate(a) => commands::generate(&config, a),
        Command::BuildGraph(a) => commands::build_graph(&config, a),
        Command::Train(a) => commands::train(&config, a),
        Command::Decompose(a) => commands::decompose(&config, a),
        Command::Plr(a) => commands::plr(&config, a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Benchmark(a) => commands::benchmark(&config, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json values serialize"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Parses a degradation case name, listing the valid ones on failure.
pub fn parse_case(s: &str) -> anyhow::Result<DegradationCase> {
    Ok(s.parse::<DegradationCase>()?)
}
