use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hddp_cli::commands::{cmd_ablate, cmd_plan, cmd_simulate, Overrides, Status};
use hddp_cli::config::load_experiment;
use hddp_cli::presets;
use log::LevelFilter;

/// Hybrid DDP planner for planar pushing and pivoting.
#[derive(Parser)]
#[command(name = "hddp", version)]
struct Cli {
    /// Log progress (-v) or per-iteration DDP costs (-vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Worker threads for leaf and sweep parallelism (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file, or the name of a shipped preset (see `hddp presets`).
    #[arg(long)]
    config: String,

    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Noise seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,

    /// Write zero for every wall-clock timing so outputs are byte-stable.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Plan from every initial state and write one JSON file per plan.
    Plan(Common),
    /// Execute a plan under noise, open- and/or closed-loop.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Plan JSON written by `hddp plan`.
        #[arg(long)]
        plan: PathBuf,
    },
    /// Run an ablation sweep and write its CSV.
    Ablate(Common),
    /// List the shipped presets.
    Presets,
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        out: c.out.clone(),
        seed: c.seed,
        no_timing: c.no_timing,
    }
}

fn run(cli: Cli) -> Result<Status> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Plan(c) => cmd_plan(&load_experiment(&c.config)?, &overrides(&c), &mut stdout),
        Command::Simulate { common, plan } => cmd_simulate(
            &load_experiment(&common.config)?,
            &plan,
            &overrides(&common),
            &mut stdout,
        ),
        Command::Ablate(c) => cmd_ablate(&load_experiment(&c.config)?, &overrides(&c), &mut stdout),
        Command::Presets => {
            for name in presets::names() {
                println!("{name}");
            }
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
