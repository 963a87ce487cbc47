mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::Overrides;

/// Exit status: flag or input errors.
pub const EXIT_USAGE: u8 = 2;
/// Exit status: a quality parameter outside its signalable range.
pub const EXIT_RANGE: u8 = 3;
/// Exit status: rate matching finished without meeting the threshold.
pub const EXIT_THRESHOLD: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Range(String),
    #[error("rate matching missed the threshold (relative diff {0:.4})")]
    ThresholdNotMet(f64),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Range(_) => EXIT_RANGE,
            CliError::ThresholdNotMet(_) => EXIT_THRESHOLD,
            CliError::Other(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vrja", version, about = "Variable-rate latent codec toolkit")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// `key = value` file with run settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Picture seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seed of the synthetic model suite.
    #[arg(long, global = true)]
    suite_seed: Option<u64>,
    #[arg(long, global = true)]
    c_y: Option<u8>,
    #[arg(long, global = true)]
    c_uv: Option<u8>,
    /// Latent grid height (source height / 16).
    #[arg(long, global = true)]
    latent_height: Option<usize>,
    /// Latent grid width (source width / 16).
    #[arg(long, global = true)]
    latent_width: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            suite_seed: self.suite_seed,
            c_y: self.c_y,
            c_uv: self.c_uv,
            latent_height: self.latent_height,
            latent_width: self.latent_width,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode the synthetic picture into a `.vrja` container.
    Encode(commands::EncodeArgs),
    /// Decode a container and print its parameters.
    Decode(commands::DecodeArgs),
    /// Find a model and delta beta that hit a target rate.
    MatchRate(commands::MatchRateArgs),
    /// Sweep delta beta and write `model,delta_beta,bpp,quality` rows.
    RdCurve(commands::RdCurveArgs),
    /// Bjøntegaard-delta rate between two RD curves.
    BdRate(commands::BdRateArgs),
    /// Compare encodes with and without a region-of-interest map.
    RoiDemo(commands::RoiDemoArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::RunConfig::load(cli.run.config.as_deref(), &cli.run.overrides())?;
    match cli.command {
        Command::Encode(a) => commands::encode(&cfg, &a),
        Command::Decode(a) => commands::decode(&cfg, &a),
        Command::MatchRate(a) => commands::match_rate(&cfg, &a),
        Command::RdCurve(a) => commands::rd_curve(&cfg, &a),
        Command::BdRate(a) => commands::bd_rate(&a),
        Command::RoiDemo(a) => commands::roi_demo(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
