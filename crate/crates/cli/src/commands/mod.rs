pub mod diag;
pub mod eval;
pub mod stack;
pub mod sweep;
pub mod synth;
pub mod validate;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use spanfuse_core::interchange::{load_gold_file, load_prediction_file};
use spanfuse_core::pool::predict_answers;
use spanfuse_core::scoring::evaluate;
use spanfuse_core::{AlignConfig, AlignedBundle, Error, GoldSet, PredictionPool, ScoreReport};

use crate::config::AccMetric;

pub(crate) fn load_pool(paths: &[PathBuf]) -> Result<PredictionPool> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(load_prediction_file(p)?);
    }
    Ok(PredictionPool::from_records(records)?)
}

pub(crate) fn load_gold(path: &Path) -> Result<GoldSet> {
    let answers = load_gold_file(path)?;
    Ok(GoldSet::new(answers)?)
}

/// Questions covered by the predictions, with gold contexts checked.
pub(crate) fn gold_bundles(pool: &PredictionPool, gold: &GoldSet) -> Result<Vec<AlignedBundle>> {
    let bundles = pool.bundles(Some(gold), &AlignConfig::default())?;
    if bundles.len() < gold.len() {
        log::warn!(
            "{} of {} gold questions have no predictions and are not scored",
            gold.len() - bundles.len(),
            gold.len()
        );
    }
    Ok(bundles)
}

pub(crate) fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Score each base model on its own distributions over the shared grid.
pub(crate) fn base_reports(
    bundles: &[AlignedBundle],
    n_models: usize,
    gold: &GoldSet,
    max_span_chars: usize,
) -> Result<Vec<ScoreReport>> {
    (0..n_models)
        .map(|i| {
            let answers = predict_answers(bundles, max_span_chars, |b| Ok(b.per_model[i].1.clone()))?;
            Ok(evaluate(&answers, gold)?)
        })
        .collect()
}

pub(crate) fn accuracy_of(report: &ScoreReport, metric: AccMetric) -> f64 {
    match metric {
        AccMetric::Em => report.em,
        AccMetric::F1 => report.f1,
    }
}

/// Per-model scores on the estimation set, re-ordered to `model_ids`.
pub(crate) fn estimation_reports(
    est_predictions: &[PathBuf],
    est_gold: &[PathBuf],
    model_ids: &[String],
    max_span_chars: usize,
) -> Result<(Vec<ScoreReport>, Vec<GoldSet>)> {
    let pool = load_pool(est_predictions)?;
    let sources = est_gold.iter().map(|p| load_gold(p)).collect::<Result<Vec<_>>>()?;
    let gold = GoldSet::merged(&sources).context("estimation sources must have disjoint question ids")?;
    let bundles = gold_bundles(&pool, &gold)?;
    let reports = base_reports(&bundles, pool.n_models(), &gold, max_span_chars)?;
    let by_id: BTreeMap<&str, &ScoreReport> = pool.model_ids().iter().map(String::as_str).zip(&reports).collect();
    let ordered = model_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| Error::Usage(format!("estimation set has no predictions from model {id}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ordered, sources))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// File-name-safe version of a method label.
pub(crate) fn file_stem_for(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}
