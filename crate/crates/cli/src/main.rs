//! `dwrl`: generate channel-cue data, train and evaluate preference models,
//! run the verification suites, and produce method comparison tables.

mod commands;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dwrl_core::Method;

#[derive(Debug, Parser)]
#[command(name = "dwrl", version, about = "Dual-weighted training of thought-conditioned preference models")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed; overrides every seed in the configuration.
    #[arg(long, global = true, env = "DWRL_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "DWRL_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train and test preference-pair files.
    GenData,
    /// Train one method on a dataset.
    Train {
        /// dwrl, bt, grpo-pair, grpo-point, no-misalign or prefilled.
        #[arg(long)]
        method: Method,
        /// Training file, or a directory containing `train.jsonl`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a trained model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Test file, or a directory containing `test.jsonl`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the gradient, estimator, weight, update and metric checks.
    Verify,
    /// Train and evaluate every configured method over every configured seed.
    Ablate {
        /// Directory with `train.jsonl` and `test.jsonl`; generated from the
        /// configuration when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    ShowConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::code::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dwrl: {e}");
            ExitCode::from(e.code)
        }
    }
}
