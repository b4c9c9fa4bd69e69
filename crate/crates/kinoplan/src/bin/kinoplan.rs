use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kinoplan::bench::{cmd_build_db, cmd_oracle, cmd_plan, cmd_timing, CmdError};
use kinoplan::config::Config;

/// Motion-primitive database builder, sampling-based planner, lattice
/// oracle and timing harness for a unicycle benchmark system.
#[derive(Parser)]
#[command(name = "kinoplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed`/`seeds` in the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every grid boundary pair and write the primitive database.
    BuildDb {
        #[command(flatten)]
        common: Common,
    },
    /// Run the planner for each seed and write per-iteration logs.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Iteration budget (overrides `iters` in the config).
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Build the reachable lattice and report the resolution optimum.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Compare database lookup latency against fresh solver calls.
    Timing {
        #[command(flatten)]
        common: Common,
        /// Number of boundary pairs to time (overrides `samples`).
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn load(common: &Common, seed_key: &str) -> Result<Config, CmdError> {
    let mut cfg = Config::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.set("out_dir", out.display().to_string());
    }
    if let Some(seed) = common.seed {
        cfg.set(seed_key, seed.to_string());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::BuildDb { common } => cmd_build_db(&load(&common, "solver_seed")?),
        Command::Plan { common, iters } => {
            let mut cfg = load(&common, "seeds")?;
            if let Some(iters) = iters {
                cfg.set("iters", iters.to_string());
            }
            cmd_plan(&cfg)
        }
        Command::Oracle { common } => cmd_oracle(&load(&common, "seed")?),
        Command::Timing { common, samples } => {
            let mut cfg = load(&common, "seed")?;
            if let Some(samples) = samples {
                cfg.set("samples", samples.to_string());
            }
            cmd_timing(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
