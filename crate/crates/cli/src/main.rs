//! `efy`: train, evaluate and verify regularized energy networks from JSON configs.
//!
//! Exit codes: 0 ok, 1 i/o error, 2 config error or missing input,
//! 3 numerical divergence, 4 failed check. `EFY_SEED` overrides the config seed.

mod checks;
mod config;
mod failure;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "efy", version, about = "Energy networks trained with generalized Fenchel-Young losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write metrics, parameters and a summary.
    Train {
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a dataset with trained parameters and report accuracy.
    Eval {
        config: PathBuf,
        /// Parameter file written by `train`; `standardizer.json` must sit beside it.
        #[arg(long)]
        params: PathBuf,
        /// libsvm file to evaluate instead of the config's test split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic loss gradients with central differences.
    Gradcheck {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve random conjugate instances with the dispatched and the generic solver.
    Conjbench {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the calibration bound on a grid or random sample of inputs.
    Calibcheck {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, out } => train::cmd_train(&config, out.as_deref()),
        Command::Eval { config, params, data, out } => {
            train::cmd_eval(&config, &params, data.as_deref(), out.as_deref())
        }
        Command::Gradcheck { config, out } => checks::cmd_gradcheck(&config, out.as_deref()),
        Command::Conjbench { config, out } => checks::cmd_conjbench(&config, out.as_deref()),
        Command::Calibcheck { config, out } => checks::cmd_calibcheck(&config, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
