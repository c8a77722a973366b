//! `dctmap`: build, simulate, evaluate and render decay-rate maps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BuildDct, BuildGrid, CheckGrads, Eval, Render, Simulate};
use config::{resolve_threads, FileConfig};

/// Exit status for bad command lines.
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "dctmap", version, about = "Decay-rate maps in the cosine frequency domain")]
struct Cli {
    /// Worker threads [default: available parallelism, or DCTMAP_THREADS]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with defaults for any of the flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a spectral map to a scan set or a CARMEN log
    BuildDct(BuildDct),
    /// Build a hit/path-length grid map
    BuildGrid(BuildGrid),
    /// Sample a scan set from a map
    Simulate(Simulate),
    /// Compare spectral and grid maps over a range of resolutions
    Eval(Eval),
    /// Render a map as an 8-bit PGM of reflection probabilities
    Render(Render),
    /// Compare analytic derivatives with finite differences
    CheckGrads(CheckGrads),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(n) = resolve_threads(cli.threads, file.threads)? {
        anyhow::ensure!(n > 0, "thread count must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::BuildDct(c) => c.run(&file),
        Command::BuildGrid(c) => c.run(&file),
        Command::Simulate(c) => c.run(&file),
        Command::Eval(c) => c.run(&file),
        Command::Render(c) => c.run(),
        Command::CheckGrads(c) => c.run(),
    }
}
