//! Command-line runner for the levylab experiments.

pub mod config;
pub mod error;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::Experiment;
pub use error::CliError;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "LEVYLAB_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "levylab", version, about = "Experiments on degenerate chains driven by stable-like noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Characteristic function, tail index and Q-family reduction of the noise samplers.
    Sample(RunArgs),
    /// Simulate a chain and write the path ensemble.
    Simulate(RunArgs),
    /// Proxy density inversion checks.
    Density(RunArgs),
    /// Non-uniqueness signature of the Peano-type chain.
    Peano(RunArgs),
    /// Threshold arithmetic over a grid, plus the optional well-posedness validator.
    ThresholdSweep(RunArgs),
    /// Krylov-type estimate over a family of bumps.
    Krylov(RunArgs),
    /// Time scaling of the noise-only chain.
    Scaling(RunArgs),
    /// Frozen-shift identities and mollified-flow controls.
    FlowDiagnostics(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the artifacts.
    #[arg(long, default_value = "levylab-out")]
    pub out: PathBuf,
    /// Worker threads; overrides `workers` in the file and the environment.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Override a configuration key, e.g. `--set peano.paths=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Command {
    pub fn parts(&self) -> (Experiment, &RunArgs) {
        match self {
            Command::Sample(a) => (Experiment::Sample, a),
            Command::Simulate(a) => (Experiment::Simulate, a),
            Command::Density(a) => (Experiment::Density, a),
            Command::Peano(a) => (Experiment::Peano, a),
            Command::ThresholdSweep(a) => (Experiment::ThresholdSweep, a),
            Command::Krylov(a) => (Experiment::Krylov, a),
            Command::Scaling(a) => (Experiment::Scaling, a),
            Command::FlowDiagnostics(a) => (Experiment::FlowDiagnostics, a),
        }
    }
}

fn env_workers() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|w| *w > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Validates, runs and writes artifacts; returns the exit code and the printed summary.
pub fn run(experiment: Experiment, args: &RunArgs) -> Result<(i32, String), CliError> {
    let doc = config::load_document(args.config.as_deref(), &args.overrides)?;
    let cfg = config::validate(doc, experiment)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let workers = match args.workers.or(cfg.workers) {
        Some(w) => w,
        None => env_workers()?.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    };
    if workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let output = levylab_core::sde_engine::with_workers(workers, || run::execute(experiment, &cfg, seed))??;
    let written = run::write_artifacts(&args.out, &output)?;
    let mut text = String::new();
    for r in &output.reports {
        text.push_str(&r.summary());
    }
    text.push_str(&format!("artifacts: {} files in {}\n", written.len(), args.out.display()));
    Ok((run::exit_code(output.status()), text))
}
