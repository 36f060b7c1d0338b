//! Command-line harness around `spanfuse-core`.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for I/O
//! errors.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::diag::Confidence;
use commands::stack::StackArgs;
use config::{CommonArgs, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "spanfuse", version, about = "Ensemble extractive QA models from their start/end distributions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score base models and ensemble methods against a gold file
    Eval {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the stacking network on predictions with gold answers
    StackTrain {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        stack: StackArgs,
    },
    /// Evaluate unequal-auto weighting across estimation-set sizes
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated estimation-set sizes per source
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Jaccard diversity, oracle bound and confidence statistics
    Diag {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value_t)]
        confidence: Confidence,
    },
    /// Generate a synthetic prediction pool from a TOML spec
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the spec's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check prediction and gold files
    Validate {
        /// Prediction files
        files: Vec<PathBuf>,
        /// Gold files (repeatable)
        #[arg(long)]
        gold: Vec<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval { common } => commands::eval::run(&ExperimentConfig::resolve(&common)?),
        Command::StackTrain { common, stack } => {
            let mut cfg = ExperimentConfig::resolve(&common)?;
            stack.apply(&mut cfg);
            commands::stack::run(&cfg, &stack)
        }
        Command::Sweep { common, sizes } => commands::sweep::run(&ExperimentConfig::resolve(&common)?, &sizes),
        Command::Diag { common, confidence } => commands::diag::run(&ExperimentConfig::resolve(&common)?, confidence),
        Command::Synth { spec, out_dir, seed } => commands::synth::run(&spec, &out_dir, seed),
        Command::Validate { files, gold } => commands::validate::run(&files, &gold),
    }
}

/// 2 if the failure is an I/O error anywhere in the chain, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<spanfuse_core::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}
