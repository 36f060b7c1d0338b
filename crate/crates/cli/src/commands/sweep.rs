//! `sweep`: unequal-auto accuracy as a function of estimation-set size.
//!
//! Each estimation source (one per gold file) is shuffled once with
//! `derive_seed(seed, source_index)`; a size `k` then takes the first `k`
//! questions of every source, so larger sizes extend smaller ones. Model
//! accuracies are pooled over all selected questions.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spanfuse_core::pool::predict_answers;
use spanfuse_core::scoring::evaluate;
use spanfuse_core::synth::derive_seed;
use spanfuse_core::weighting::{auto_alpha, combine};
use spanfuse_core::{Error, WeightConfig, WeightMode};

use super::{dataset_name, estimation_reports, gold_bundles, load_gold, load_pool, write_file};
use crate::config::{ensure_dir, AccMetric, ExperimentConfig};

pub const DEFAULT_SIZES: [usize; 5] = [500, 1000, 2000, 5000, 10000];
pub const SWEEP_HEADER: &str = "size\tn_est\talpha\tem\tf1";

pub fn run(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<()> {
    cfg.require_predictions()?;
    let gold_path = cfg.require_gold()?;
    if !cfg.has_estimation_set() {
        bail!(Error::Usage("sweep requires an estimation set (--est-pred and --est-gold)".into()));
    }
    let sizes: Vec<usize> = if !sizes.is_empty() {
        sizes.to_vec()
    } else if !cfg.sizes.is_empty() {
        cfg.sizes.clone()
    } else {
        DEFAULT_SIZES.to_vec()
    };
    if sizes.contains(&0) {
        bail!(Error::Usage("sweep sizes must be positive".into()));
    }

    let pool = load_pool(&cfg.predictions)?;
    let model_ids = pool.model_ids().to_vec();
    let gold = load_gold(gold_path)?;
    let bundles = gold_bundles(&pool, &gold)?;

    let (est_reports, sources) =
        estimation_reports(&cfg.est_predictions, &cfg.est_gold, &model_ids, cfg.max_span_chars)?;
    // Per-model score of every estimation question.
    let per_question: Vec<BTreeMap<&str, f64>> = est_reports
        .iter()
        .map(|r| {
            r.per_sample
                .iter()
                .map(|s| {
                    let v = match cfg.acc_metric {
                        AccMetric::Em => f64::from(s.em),
                        AccMetric::F1 => s.f1,
                    };
                    (s.question_id.as_str(), v)
                })
                .collect()
        })
        .collect();

    let orders: Vec<(String, Vec<&str>)> = sources
        .iter()
        .zip(&cfg.est_gold)
        .enumerate()
        .map(|(k, (src, path))| {
            let mut ids: Vec<&str> = src
                .question_ids()
                .filter(|q| per_question[0].contains_key(q))
                .collect();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, k as u64)));
            (dataset_name(path), ids)
        })
        .collect();

    let mut out = format!("{SWEEP_HEADER}\n");
    for &size in &sizes {
        let mut selected = Vec::new();
        for (name, ids) in &orders {
            if size > ids.len() {
                log::warn!(
                    "size {size} exceeds estimation source {name} ({} questions); clamped to {}",
                    ids.len(),
                    ids.len()
                );
            }
            selected.extend_from_slice(&ids[..size.min(ids.len())]);
        }
        if selected.is_empty() {
            bail!(Error::Usage("estimation set shares no questions with its gold files".into()));
        }
        let accuracies: Vec<f64> = per_question
            .iter()
            .map(|m| 100.0 * selected.iter().map(|q| m[q]).sum::<f64>() / selected.len() as f64)
            .collect();
        let alpha = auto_alpha(&accuracies)?;
        let wc = WeightConfig {
            mode: WeightMode::UnequalAuto,
            accuracies: Some(accuracies),
            probabilistic: !cfg.non_prob,
        };
        let answers = predict_answers(&bundles, cfg.max_span_chars, |b| combine(b, &wc))?;
        let report = evaluate(&answers, &gold)?;
        out.push_str(&format!(
            "{size}\t{}\t{alpha}\t{:.4}\t{:.4}\n",
            selected.len(),
            report.em,
            report.f1
        ));
    }

    ensure_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("sweep.tsv"), &out)?;
    print!("{out}");
    Ok(())
}
