//! `kmotion`: phantoms, motion corruption, datasets, training, correction and
//! evaluation from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "kmotion", version, about = "Rigid-motion k-space simulation and learned correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for every artifact of this run.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate random head phantoms (or the standard phantom).
    Phantom {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Write the scaled 3D Shepp-Logan phantom instead of random ones.
        #[arg(long)]
        standard: bool,
    },
    /// Corrupt a volume with a trajectory file or a seeded random trajectory.
    Corrupt {
        #[command(flatten)]
        common: Common,
        /// Volume header (.json) to corrupt.
        #[arg(long)]
        input: PathBuf,
        /// Trajectory manifest; without it a random one is drawn from the seed.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Build train and test datasets.
    Dataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: usize,
        #[arg(long)]
        test: usize,
        #[arg(long)]
        motions: Option<usize>,
    },
    /// Train the network on a train manifest.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Comma-separated channel widths, one per level.
        #[arg(long, value_delimiter = ',')]
        channels: Option<Vec<usize>>,
    },
    /// Apply trained weights to a volume.
    Correct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Correct only this slice and also export it as a graymap.
        #[arg(long)]
        slice: Option<usize>,
    },
    /// Fit the pristine quality model on a manifest's reference slices.
    NiqeFit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Evaluate trained weights on a test manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Pristine model header written by `niqe-fit`.
        #[arg(long)]
        model: PathBuf,
    },
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if e.kind() == ErrorKind::InvalidSubcommand {
                eprintln!("\n{}", Cli::command().render_help());
            }
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_DATA })
        }
    }
}
