//! `eval`: score base models and ensembles on one gold set.

use std::collections::BTreeSet;

use anyhow::{bail, Result};
use spanfuse_core::pool::predict_answers;
use spanfuse_core::scoring::{evaluate, per_sample_tsv, summary_tsv};
use spanfuse_core::stacking::{load_checkpoint, stack_combine};
use spanfuse_core::weighting::combine;
use spanfuse_core::{Error, ScoreReport, SummaryRow, WeightConfig, WeightMode};

use super::{
    accuracy_of, base_reports, dataset_name, estimation_reports, file_stem_for, gold_bundles, load_gold, load_pool,
    write_file,
};
use crate::config::{ensure_dir, ExperimentConfig, Method};

pub const WEIGHTS_HEADER: &str = "method\tmodel_id\taccuracy\talpha\tweight";

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    cfg.require_predictions()?;
    let gold_path = cfg.require_gold()?;
    if cfg.methods.is_empty() {
        bail!(Error::Usage("at least one --method is required".into()));
    }
    let labels: Vec<String> = cfg.methods.iter().map(|m| label(m, cfg.non_prob)).collect();
    if labels.iter().collect::<BTreeSet<_>>().len() != labels.len() {
        bail!(Error::Usage("a method is listed more than once".into()));
    }

    let pool = load_pool(&cfg.predictions)?;
    let model_ids = pool.model_ids().to_vec();
    let n_models = model_ids.len();

    // Accuracies are needed before any work is done so that a missing
    // estimation set fails fast.
    let mut accuracies = None;
    for m in &cfg.methods {
        if let Method::Weight(mode) = m {
            if mode.is_unequal() && accuracies.is_none() {
                if !cfg.has_estimation_set() {
                    let what = match mode {
                        WeightMode::UnequalAuto => "auto",
                        _ => "unequal-fixed",
                    };
                    bail!(Error::Usage(format!("{what} mode requires estimation set")));
                }
                let (reports, _) =
                    estimation_reports(&cfg.est_predictions, &cfg.est_gold, &model_ids, cfg.max_span_chars)?;
                accuracies = Some(reports.iter().map(|r| accuracy_of(r, cfg.acc_metric)).collect::<Vec<f64>>());
            }
        }
    }

    let gold = load_gold(gold_path)?;
    let dataset = dataset_name(gold_path);
    let bundles = gold_bundles(&pool, &gold)?;

    let mut reports: Vec<(String, ScoreReport)> = model_ids
        .iter()
        .map(|id| format!("base:{id}"))
        .zip(base_reports(&bundles, n_models, &gold, cfg.max_span_chars)?)
        .collect();
    let mut weights_tsv = format!("{WEIGHTS_HEADER}\n");
    let mut any_weights = false;

    for (method, label) in cfg.methods.iter().zip(labels) {
        let answers = match method {
            Method::Weight(mode) => {
                let wc = WeightConfig {
                    mode: *mode,
                    accuracies: if mode.is_unequal() { accuracies.clone() } else { None },
                    probabilistic: !cfg.non_prob,
                };
                wc.validate(n_models)?;
                if let (Some(alpha), Some(weights)) = (wc.alpha()?, wc.weights()?) {
                    any_weights = true;
                    let acc = wc.accuracies.as_deref().unwrap_or_default();
                    for ((id, a), w) in model_ids.iter().zip(acc).zip(&weights) {
                        weights_tsv.push_str(&format!("{label}\t{id}\t{a:.4}\t{alpha}\t{w:.6}\n"));
                    }
                    log::info!("{label}: alpha = {alpha}");
                }
                predict_answers(&bundles, cfg.max_span_chars, |b| combine(b, &wc))?
            }
            Method::Stack(path) => {
                let model = load_checkpoint(path)?;
                if model.n_models != n_models {
                    bail!(Error::Usage(format!(
                        "checkpoint {} was trained for {} models, got {n_models}",
                        path.display(),
                        model.n_models
                    )));
                }
                predict_answers(&bundles, cfg.max_span_chars, |b| stack_combine(&model, b))?
            }
        };
        reports.push((label, evaluate(&answers, &gold)?));
    }

    ensure_dir(&cfg.out_dir)?;
    let rows: Vec<SummaryRow> = reports
        .iter()
        .map(|(label, r)| SummaryRow::new(label.clone(), dataset.clone(), r))
        .collect();
    let summary = summary_tsv(&rows);
    write_file(&cfg.out_dir.join("summary.tsv"), &summary)?;
    if any_weights {
        write_file(&cfg.out_dir.join("weights.tsv"), &weights_tsv)?;
    }
    if cfg.per_sample {
        let dir = cfg.out_dir.join("per_sample");
        ensure_dir(&dir)?;
        for (label, r) in &reports {
            write_file(&dir.join(format!("{}.tsv", file_stem_for(label))), &per_sample_tsv(r))?;
        }
    }
    print!("{summary}");
    Ok(())
}

/// Row label of a method; the one-hot variant is marked explicitly.
pub fn label(method: &Method, non_prob: bool) -> String {
    match method {
        Method::Weight(_) if non_prob => format!("{method}+non-prob"),
        _ => method.to_string(),
    }
}
