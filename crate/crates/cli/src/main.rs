//! `jetid`: datasets, identification, closed-loop simulation and propulsion
//! sizing from the command line.
//!
//! Exit status is 0 on success, 1 on error and 2 when the run completed with
//! warnings.

mod cmd;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use io::OutDir;

#[derive(Debug, Parser)]
#[command(name = "jetid", version, about = "Model jet engine identification, control and sizing")]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream (config key `rng_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (config key `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent datasets and seeds (config key `jobs`).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an excitation campaign and write the noisy dataset.
    Generate(cmd::generate::Args),
    /// Estimate a model from one or more datasets.
    Identify(cmd::identify::Args),
    /// Open-loop validation of a model against a dataset.
    Validate(cmd::validate::Args),
    /// Closed-loop thrust tracking simulation.
    Control(cmd::control::Args),
    /// Energy-storage mass and engine count tables.
    Sizing(cmd::sizing::Args),
    /// Excitation check of a dataset against the structure library.
    RankCheck(cmd::rank_check::Args),
}

/// Settings shared by every subcommand after merging flags and config.
pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: OutDir,
    pub pool: rayon::ThreadPool,
}

fn run(cli: Cli) -> anyhow::Result<Vec<String>> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let jobs = cli.jobs.or(cfg.jobs).unwrap_or(1);
    if jobs == 0 {
        anyhow::bail!("--jobs must be at least 1");
    }
    let ctx = Ctx {
        seed: cli.seed.or(cfg.rng_seed).unwrap_or(0),
        out: OutDir(cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."))),
        pool: rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?,
        cfg,
    };
    match cli.command {
        Command::Generate(a) => cmd::generate::run(&ctx, a),
        Command::Identify(a) => cmd::identify::run(&ctx, a),
        Command::Validate(a) => cmd::validate::run(&ctx, a),
        Command::Control(a) => cmd::control::run(&ctx, a),
        Command::Sizing(a) => cmd::sizing::run(&ctx, a),
        Command::RankCheck(a) => cmd::rank_check::run(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(warnings) if warnings.is_empty() => ExitCode::SUCCESS,
        Ok(warnings) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
