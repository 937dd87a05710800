//! `lineup`: batch entry points for the face-space toolkit.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod commands;
mod error;

use commands::{align, figures, fit, results, serve, simulate};
use error::CliError;

/// Default for `--seed`; every randomized command is reproducible by default.
pub const DEFAULT_SEED: u64 = 17_002_017;

#[derive(Debug, Parser)]
#[command(name = "lineup", version, about = "Face-space modelling, lineup searches and 2AFC experiments")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Service configuration file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output; repeat for more detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align a portrait corpus onto its mean landmark configuration.
    Align(align::AlignArgs),
    /// Fit an eigenface model to an aligned corpus.
    Fit(fit::FitArgs),
    /// Render sample, interpolation, perturbation or nearest-neighbor grids.
    Figures(figures::FiguresArgs),
    /// Closed-loop simulations with synthetic participants.
    #[command(subcommand)]
    Simulate(simulate::SimulateCommand),
    /// Run the HTTP service.
    Serve(serve::ServeArgs),
    /// Export results of a stored session by replaying its event log.
    Results(results::ResultsArgs),
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Align(args) => align::run(&args),
        Command::Fit(args) => fit::run(&args),
        Command::Figures(args) => figures::run(&args, cli.seed),
        Command::Simulate(cmd) => simulate::run(&cmd, cli.seed, cli.config.as_deref()),
        Command::Serve(args) => serve::run(&args, cli.config.as_deref()),
        Command::Results(args) => results::run(&args, cli.config.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lineup: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
