//! Model-pool analysis: correctness overlap, the per-sample oracle bound, and
//! confidence over the gold span.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::AlignedBundle;
use crate::scoring::{escape_field, SampleScore, ScoreReport};
use crate::weighting::{equal_weight_combine, CombineKind};

/// Per-question exact-match flags of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessVector {
    pub model_id: String,
    pub question_ids: Vec<String>,
    pub correct: Vec<bool>,
}

impl CorrectnessVector {
    pub fn from_report(model_id: impl Into<String>, report: &ScoreReport) -> Self {
        Self {
            model_id: model_id.into(),
            question_ids: report.per_sample.iter().map(|s| s.question_id.clone()).collect(),
            correct: report.per_sample.iter().map(|s| s.em == 1).collect(),
        }
    }

    pub fn n_correct(&self) -> usize {
        self.correct.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardMatrix {
    pub model_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Mean of the off-diagonal entries; `None` for fewer than two models.
    pub off_diagonal_mean: Option<f64>,
}

impl JaccardMatrix {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model");
        for id in &self.model_ids {
            out.push('\t');
            out.push_str(&escape_field(id));
        }
        out.push('\n');
        for (id, row) in self.model_ids.iter().zip(&self.values) {
            out.push_str(&escape_field(id));
            for v in row {
                out.push_str(&format!("\t{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `|C_i ∩ C_j| / |C_i ∪ C_j|` for every pair of models; two empty sets count
/// as identical (1.0).
pub fn jaccard_matrix(vectors: &[CorrectnessVector]) -> Result<JaccardMatrix> {
    if let Some(first) = vectors.first() {
        if let Some(v) = vectors.iter().find(|v| v.question_ids != first.question_ids) {
            return Err(Error::usage(format!(
                "model {} was evaluated on a different question list than {}",
                v.model_id, first.model_id
            )));
        }
        if let Some(v) = vectors.iter().find(|v| v.correct.len() != v.question_ids.len()) {
            return Err(Error::usage(format!("model {}: flag count mismatch", v.model_id)));
        }
    }
    let m = vectors.len();
    let mut values = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let (mut both, mut either) = (0usize, 0usize);
            for (&a, &b) in vectors[i].correct.iter().zip(&vectors[j].correct) {
                both += usize::from(a && b);
                either += usize::from(a || b);
            }
            let v = if either == 0 { 1.0 } else { both as f64 / either as f64 };
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    let off: Vec<f64> = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| values[i][j])
        .collect();
    let off_diagonal_mean = (!off.is_empty()).then(|| off.iter().sum::<f64>() / off.len() as f64);
    Ok(JaccardMatrix {
        model_ids: vectors.iter().map(|v| v.model_id.clone()).collect(),
        values,
        off_diagonal_mean,
    })
}

/// Per sample, keep the model with the highest F1 (EM breaks ties, then the
/// earlier model).
pub fn oracle_upper_bound(reports: &[ScoreReport]) -> Result<ScoreReport> {
    let first = reports.first().ok_or_else(|| Error::usage("oracle needs at least one report"))?;
    if reports
        .iter()
        .any(|r| r.per_sample.len() != first.per_sample.len() || !r.question_ids().eq(first.question_ids()))
    {
        return Err(Error::usage("reports cover different question lists"));
    }
    let samples: Vec<SampleScore> = (0..first.per_sample.len())
        .map(|i| {
            let mut best = &first.per_sample[i];
            for r in &reports[1..] {
                let s = &r.per_sample[i];
                if s.f1 > best.f1 || (s.f1 == best.f1 && s.em > best.em) {
                    best = s;
                }
            }
            best.clone()
        })
        .collect();
    Ok(ScoreReport::from_samples(samples))
}

/// Which gold-span positions feed the confidence average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceRule {
    /// Mean over kept gold-span positions `t` of `start[t] * end[t]`.
    #[default]
    PositionWise,
    /// `start[gold_start] * end[gold_end]` only.
    Boundary,
}

/// Five-number summary plus mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Summary {
            n: v.len(),
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfidence {
    pub question_id: String,
    pub per_model: Vec<f64>,
    pub ensemble: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    pub model_ids: Vec<String>,
    pub per_model: Vec<Option<Summary>>,
    pub ensemble: Option<Summary>,
    pub samples: Vec<SampleConfidence>,
    /// Samples whose gold span could not be placed on the kept grid.
    pub dropped: usize,
}

impl ConfidenceStats {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("series\tn\tmin\tq1\tmedian\tq3\tmax\tmean\n");
        let names = self.model_ids.iter().map(String::as_str).chain(std::iter::once("ensemble:geomean"));
        let summaries = self.per_model.iter().chain(std::iter::once(&self.ensemble));
        for (name, s) in names.zip(summaries) {
            match s {
                Some(s) => out.push_str(&format!(
                    "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                    escape_field(name),
                    s.n,
                    s.min,
                    s.q1,
                    s.median,
                    s.q3,
                    s.max,
                    s.mean
                )),
                None => out.push_str(&format!("{}\t0\t\t\t\t\t\t\n", escape_field(name))),
            }
        }
        out
    }
}

fn span_confidence(
    start: &[f64],
    end: &[f64],
    keep: &[bool],
    (gs, ge): (usize, usize),
    rule: ConfidenceRule,
) -> f64 {
    match rule {
        ConfidenceRule::Boundary => start[gs] * end[ge],
        ConfidenceRule::PositionWise => {
            let (sum, n) = (gs..=ge)
                .filter(|&t| keep[t])
                .fold((0.0, 0usize), |(s, n), t| (s + start[t] * end[t], n + 1));
            sum / n as f64
        }
    }
}

/// Average `start × end` over each sample's gold span for every base model
/// and for the geometric-mean ensemble. `gold_spans` are inclusive character
/// spans; samples whose span is out of range or whose boundaries are masked
/// are dropped and counted.
pub fn span_confidence_stats(
    samples: &[(AlignedBundle, (usize, usize))],
    rule: ConfidenceRule,
) -> Result<ConfidenceStats> {
    let model_ids: Vec<String> = samples
        .first()
        .map(|(b, _)| b.model_ids().map(str::to_string).collect())
        .unwrap_or_default();
    let mut dropped = 0usize;
    let mut rows = Vec::new();
    for (bundle, span) in samples {
        if bundle.model_ids().ne(model_ids.iter().map(String::as_str)) {
            return Err(Error::usage(format!(
                "question {} has a different model list",
                bundle.question_id
            )));
        }
        let (gs, ge) = *span;
        let keep = bundle.keep_mask();
        if gs > ge || ge >= keep.len() || !keep[gs] || !keep[ge] {
            dropped += 1;
            continue;
        }
        let per_model = bundle
            .pairs()
            .map(|p| span_confidence(&p.start, &p.end, keep, *span, rule))
            .collect();
        let ens = equal_weight_combine(bundle, CombineKind::GeometricMean)?;
        rows.push(SampleConfidence {
            question_id: bundle.question_id.clone(),
            per_model,
            ensemble: span_confidence(&ens.start, &ens.end, keep, *span, rule),
        });
    }
    let per_model = (0..model_ids.len())
        .map(|i| Summary::of(&rows.iter().map(|r| r.per_model[i]).collect::<Vec<_>>()))
        .collect();
    let ensemble = Summary::of(&rows.iter().map(|r| r.ensemble).collect::<Vec<_>>());
    Ok(ConfidenceStats {
        model_ids,
        per_model,
        ensemble,
        samples: rows,
        dropped,
    })
}
