//! `diag`: diversity, oracle bound and confidence statistics of a pool.

use anyhow::Result;
use clap::ValueEnum;
use spanfuse_core::diagnostics::{
    jaccard_matrix, oracle_upper_bound, span_confidence_stats, ConfidenceRule, CorrectnessVector,
};
use spanfuse_core::pool::training_samples;
use spanfuse_core::scoring::summary_tsv;
use spanfuse_core::SummaryRow;

use super::{base_reports, dataset_name, gold_bundles, load_gold, load_pool, write_file};
use crate::config::{ensure_dir, ExperimentConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Confidence {
    /// Mean of start×end over the gold span's characters
    #[default]
    Position,
    /// start at the gold start times end at the gold end
    Boundary,
}

impl From<Confidence> for ConfidenceRule {
    fn from(c: Confidence) -> Self {
        match c {
            Confidence::Position => ConfidenceRule::PositionWise,
            Confidence::Boundary => ConfidenceRule::Boundary,
        }
    }
}

pub fn run(cfg: &ExperimentConfig, confidence: Confidence) -> Result<()> {
    cfg.require_predictions()?;
    let gold_path = cfg.require_gold()?;
    let pool = load_pool(&cfg.predictions)?;
    let gold = load_gold(gold_path)?;
    let dataset = dataset_name(gold_path);
    let bundles = gold_bundles(&pool, &gold)?;
    let reports = base_reports(&bundles, pool.n_models(), &gold, cfg.max_span_chars)?;

    let vectors: Vec<CorrectnessVector> = pool
        .model_ids()
        .iter()
        .zip(&reports)
        .map(|(id, r)| CorrectnessVector::from_report(id.clone(), r))
        .collect();
    let jaccard = jaccard_matrix(&vectors)?;
    let oracle = oracle_upper_bound(&reports)?;

    let mut rows: Vec<SummaryRow> = pool
        .model_ids()
        .iter()
        .zip(&reports)
        .map(|(id, r)| SummaryRow::new(format!("base:{id}"), dataset.clone(), r))
        .collect();
    rows.push(SummaryRow::new("oracle", dataset.clone(), &oracle));

    let (samples, _) = training_samples(&bundles, &gold);
    let stats = span_confidence_stats(&samples, confidence.into())?;

    ensure_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("jaccard.tsv"), &jaccard.to_tsv())?;
    let mean = jaccard
        .off_diagonal_mean
        .map_or(String::new(), |m| format!("{m:.6}"));
    write_file(
        &cfg.out_dir.join("diagnostics.tsv"),
        &format!(
            "statistic\tvalue\njaccard_off_diagonal_mean\t{mean}\nconfidence_dropped\t{}\n",
            stats.dropped
        ),
    )?;
    let summary = summary_tsv(&rows);
    write_file(&cfg.out_dir.join("summary.tsv"), &summary)?;
    write_file(&cfg.out_dir.join("confidence.tsv"), &stats.to_tsv())?;
    print!("{summary}");
    println!("jaccard off-diagonal mean: {}", if mean.is_empty() { "-" } else { &mean });
    Ok(())
}
