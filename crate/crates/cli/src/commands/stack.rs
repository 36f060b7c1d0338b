//! `stack-train`: fit the stacking network and save a checkpoint.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use spanfuse_core::pool::training_samples;
use spanfuse_core::stacking::{save_checkpoint, train};

use super::{gold_bundles, load_gold, load_pool, write_file};
use crate::config::{ensure_dir, ExperimentConfig};

pub const HISTORY_HEADER: &str = "epoch\ttrain_loss\tval_loss\tval_exact\tbest";

/// Training overrides; unset flags keep the config-file or default value.
#[derive(Debug, Clone, Default, Args)]
pub struct StackArgs {
    /// Checkpoint path [default: <out-dir>/stack.json]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Feature window half-size
    #[arg(long)]
    pub window: Option<usize>,
    /// Comma-separated trunk layer widths
    #[arg(long, value_delimiter = ',')]
    pub trunk: Option<Vec<usize>>,
    /// Width of each head's hidden layer
    #[arg(long)]
    pub branch: Option<usize>,
    /// Drop the per-model entropy features
    #[arg(long)]
    pub no_entropy: bool,
}

impl StackArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let t = &mut cfg.train;
        let f = &mut cfg.features;
        if let Some(v) = self.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if let Some(v) = self.val_fraction {
            t.validation_fraction = v;
        }
        if let Some(v) = self.window {
            f.window_half_size = v;
        }
        if let Some(v) = &self.trunk {
            f.trunk_widths.clone_from(v);
        }
        if let Some(v) = self.branch {
            f.branch_width = v;
        }
        if self.no_entropy {
            f.include_entropy = false;
        }
    }
}

pub fn run(cfg: &ExperimentConfig, args: &StackArgs) -> Result<()> {
    cfg.require_predictions()?;
    let gold = load_gold(cfg.require_gold()?)?;
    let pool = load_pool(&cfg.predictions)?;
    let bundles = gold_bundles(&pool, &gold)?;
    let (samples, skipped) = training_samples(&bundles, &gold);
    if skipped > 0 {
        log::warn!("{skipped} questions skipped: no gold answer occurs verbatim in the context");
    }
    cfg.features.validate()?;
    let outcome = train(&samples, &cfg.train, &cfg.features)?;

    ensure_dir(&cfg.out_dir)?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("stack.json"));
    save_checkpoint(&outcome.model, &ckpt)?;

    let mut history = format!("{HISTORY_HEADER}\n");
    for e in &outcome.history {
        history.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.4}\t{}\n",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_exact,
            u8::from(Some(e.epoch) == outcome.best_epoch)
        ));
    }
    write_file(&cfg.out_dir.join("history.tsv"), &history)?;

    let last = outcome.history.last();
    println!(
        "trained on {} questions; best epoch {} of {}; held-out exact span {:.2}%; checkpoint {}",
        samples.len(),
        outcome.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        last.map_or(0, |e| e.epoch),
        outcome
            .best_epoch
            .and_then(|b| outcome.history.iter().find(|e| e.epoch == b))
            .map_or(0.0, |e| e.val_exact),
        ckpt.display()
    );
    Ok(())
}
