//! `patrolbench` experiment runner.
//!
//! Exit codes: 0 success, 1 runtime error, 2 config error, 3 verification
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands::VerificationFailed;
use crate::config::{ConfigError, Experiment};

#[derive(Parser)]
#[command(name = "patrolbench", version, about = "Multi-robot persistent monitoring benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON, "schema": 1).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's "out".
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for rollouts (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the configured policy and write logs, metrics and a summary.
    Simulate(Common),
    /// Exhaustive search for the optimal periodic strategy.
    Oracle(Common),
    /// Train tabular SMDP Q-learning and evaluate its greedy policy.
    Learn(Common),
    /// Check the discretization bound and T-invariance of the optimum.
    Verify(Common),
    /// Recompute metrics of a saved event log.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Event log in JSON-lines format.
        #[arg(long)]
        log: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let (common, log) = match &cli.command {
        Command::Simulate(c) | Command::Oracle(c) | Command::Learn(c) | Command::Verify(c) => (c, None),
        Command::Metrics { common, log } => (common, Some(log)),
    };
    let mut exp = Experiment::load(&common.config)?;
    if let Some(seed) = common.seed {
        exp.seed = seed;
    }
    let out = commands::output_dir(common.out.clone(), &exp)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(common.jobs.unwrap_or(0)).build()?;
    pool.install(|| {
        let text = match &cli.command {
            Command::Simulate(_) => serde_json::to_string_pretty(&commands::simulate(&exp, &exp.policy, &out)?)?,
            Command::Oracle(_) => serde_json::to_string_pretty(&commands::oracle(&exp, &out)?)?,
            Command::Learn(_) => serde_json::to_string_pretty(&commands::learn(&exp, &out)?)?,
            Command::Verify(_) => serde_json::to_string_pretty(&commands::verify(&exp, &out)?)?,
            Command::Metrics { .. } => serde_json::to_string_pretty(&commands::metrics(&exp, log.expect("metrics has --log"), &out)?)?,
        };
        println!("{text}");
        Ok(())
    })
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<VerificationFailed>() {
        return 3;
    }
    if e.is::<ConfigError>() {
        return 2;
    }
    match e.downcast_ref::<patrolbench::Error>() {
        Some(patrolbench::Error::Config(_) | patrolbench::Error::Parse(_) | patrolbench::Error::InvalidGraph(_) | patrolbench::Error::UnknownNode(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
