use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use bsde_cli::{execute, with_threads, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "bsde", version, about = "Chaos-projection BSDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once.
    Run(Common),
    /// Solve `repetitions` times with seeds seed, seed+1, ...
    Repeat(Common),
    /// Solve once per value of the sweep axis.
    Sweep(Common),
    /// Sample solution trajectories.
    Paths(Common),
    /// Compute the independent baselines.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV, overriding the file (stdout when neither is set).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Run(a) => (Mode::Run, a),
        Command::Repeat(a) => (Mode::Repeat, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::Paths(a) => (Mode::Paths, a),
        Command::Oracle(a) => (Mode::Oracle, a),
    };
    match go(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn go(mode: Mode, args: Common) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out = Some(o);
    }
    cfg.validate(mode)?;
    with_threads(args.threads, || execute(mode, &cfg))?
}
