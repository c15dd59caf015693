//! `sgflow <experiment> --config <file> [--seed N] [--out DIR] [--override key=value]...`

mod config;
mod emit;
mod error;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Experiment, Sources};
use error::CliError;

/// Runs SGD, stochastic gradient flow and ridge regression experiments and
/// writes plot-ready CSV and JSON files.
#[derive(Debug, Parser)]
#[command(name = "sgflow", version = env!("SGFLOW_GIT_DESCRIBE"))]
struct Args {
    experiment: Experiment,

    /// JSON configuration merged over the experiment's defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (default `out/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Dotted `key=value` assignment; the value is parsed as JSON, else
    /// taken as a string. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

/// `SGFLOW_THREADS`, when set to a positive integer.
fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("SGFLOW_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("SGFLOW_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(args: &Args) -> Result<(), CliError> {
    sgflow::exec::init_threads(thread_cap()?);
    let sources = Sources {
        file: args.config.as_deref(),
        seed: args.seed,
        out: args.out.as_deref(),
        overrides: &args.overrides,
    };
    let config = config::resolve(args.experiment, &sources)?;
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
        return Ok(());
    }
    let files = experiments::run(args.experiment, &config)?;
    println!(
        "{}: {} files in {}",
        args.experiment,
        files.len() + 1,
        config.out_dir(args.experiment).display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
