//! `dynswitch`: train, evaluate and sweep switch-layer autoencoders from a
//! TOML run config.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 training divergence,
//! 4 malformed checkpoint or data file, 5 I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{RunConfig, Threshold};

#[derive(Parser)]
#[command(name = "dynswitch", version, about = "Switch-layer autoencoder experiments")]
struct Cli {
    /// Overrides `train.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Maximum number of training runs executed in parallel by sweeps.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, metrics.csv and calibration.csv.
    Train { config: PathBuf },

    /// Route the test split through a checkpoint and write routing.csv,
    /// parity.csv and probe.csv.
    Eval {
        config: PathBuf,
        checkpoint: PathBuf,
        /// Fixed routing threshold.
        #[arg(long, conflicts_with = "target_light_fraction")]
        tau: Option<f64>,
        /// Calibrate the threshold on the calibrate split to route this
        /// fraction of frames light.
        #[arg(long)]
        target_light_fraction: Option<f64>,
    },

    /// Train once per compression weight and write sparsity.csv.
    SweepBeta {
        config: PathBuf,
        /// Comma-separated compression weights.
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        betas: Vec<f64>,
    },

    /// Train once per switch placement and write ablation.csv.
    AblatePlacement {
        config: PathBuf,
        /// Comma-separated layer indices; defaults to every valid placement.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        placements: Vec<usize>,
    },

    /// Write the synthetic frames as 16-bit WAV files under easy/ and hard/.
    GenData {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A command failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 5, message: message.into() }
    }
}

impl From<dynswitch::Error> for Failure {
    fn from(e: dynswitch::Error) -> Self {
        use dynswitch::Error as E;
        let code = match &e {
            E::Training(_) => 3,
            E::Format { .. } => 4,
            E::Io { .. } => 5,
            E::Config(_) | E::Contract(_) | E::Dimension { .. } | E::Index { .. } => 2,
        };
        Self { code, message: e.to_string() }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let jobs = cli
        .jobs
        .map(|j| j as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match cli.command {
        Command::Train { config } => commands::train(&RunConfig::load(&config)?, cli.seed),
        Command::Eval {
            config,
            checkpoint,
            tau,
            target_light_fraction,
        } => {
            let flag = match (tau, target_light_fraction) {
                (Some(t), _) => Some(Threshold::Tau(t)),
                (None, Some(f)) if !(0.0..=1.0).contains(&f) => {
                    return Err(Failure::usage(format!("--target-light-fraction {f} is outside [0, 1]")))
                }
                (None, Some(f)) => Some(Threshold::TargetLightFraction(f)),
                (None, None) => None,
            };
            commands::eval(&RunConfig::load(&config)?, &checkpoint, flag)
        }
        Command::SweepBeta { config, betas } => commands::sweep_beta(&RunConfig::load(&config)?, &betas, cli.seed, jobs),
        Command::AblatePlacement { config, placements } => {
            commands::ablate_placement(&RunConfig::load(&config)?, &placements, cli.seed, jobs)
        }
        Command::GenData { config, out } => commands::gen_data(&RunConfig::load(&config)?, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
