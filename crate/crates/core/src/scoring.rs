//! Span extraction and the EM / F1 metrics.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{CharDistributionPair, GoldSet};

pub const DEFAULT_MAX_SPAN_CHARS: usize = 200;

/// Inclusive character span with its `start × end` score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// The `(s, e)` maximizing `start[s] * end[e]` over kept positions with
/// `s <= e` and `e - s + 1 <= max_span_chars`. Ties go to the earliest start,
/// then the earliest end.
pub fn extract_span(pair: &CharDistributionPair, max_span_chars: usize) -> Result<CharSpan> {
    if max_span_chars == 0 {
        return Err(Error::usage("max_span_chars must be at least 1"));
    }
    let n = pair.len();
    let mut best: Option<CharSpan> = None;
    for s in 0..n {
        if !pair.keep_mask[s] {
            continue;
        }
        let last = (s + max_span_chars).min(n);
        for e in s..last {
            if !pair.keep_mask[e] {
                continue;
            }
            let score = pair.start[s] * pair.end[e];
            if best.is_none_or(|b| score > b.score) {
                best = Some(CharSpan { start: s, end: e, score });
            }
        }
    }
    best.ok_or_else(|| Error::degenerate("no feasible span: grid has no kept position"))
}

/// A span turned into answer text.
#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub span: CharSpan,
    /// Inclusive end after extending over the trailing run of characters that
    /// share the end value at `span.end`.
    pub text_end: usize,
    pub text: String,
}

/// Extract the best span and its surface text.
///
/// Token probabilities are replicated over characters, so the earliest-end tie
/// rule stops at the first character of the end token. The end is therefore
/// extended while the next character is kept and carries an identical end
/// value, which recovers the finest token boundary shared by all models.
pub fn extract_answer(context: &str, pair: &CharDistributionPair, max_span_chars: usize) -> Result<Answer> {
    let span = extract_span(pair, max_span_chars)?;
    let mut text_end = span.end;
    while text_end + 1 < pair.len()
        && pair.keep_mask[text_end + 1]
        && pair.end[text_end + 1] == pair.end[span.end]
    {
        text_end += 1;
    }
    let text = context
        .chars()
        .skip(span.start)
        .take(text_end + 1 - span.start)
        .collect();
    Ok(Answer { span, text_end, text })
}

static ARTICLES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"));

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, and
/// collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_match(pred: &str, golds: &[String]) -> u8 {
    let p = normalize_answer(pred);
    u8::from(golds.iter().any(|g| normalize_answer(g) == p))
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Word-level F1 against the best-matching gold answer.
pub fn f1(pred: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| token_f1(pred, g)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub question_id: String,
    pub em: u8,
    pub f1: f64,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Percentage in `[0, 100]`.
    pub em: f64,
    /// Percentage in `[0, 100]`.
    pub f1: f64,
    pub n: usize,
    /// Sorted by question id.
    pub per_sample: Vec<SampleScore>,
}

impl ScoreReport {
    /// Aggregate already-scored samples. Samples are re-sorted by question id.
    pub fn from_samples(mut per_sample: Vec<SampleScore>) -> Self {
        per_sample.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        let n = per_sample.len();
        let (em_sum, f1_sum) = per_sample
            .iter()
            .fold((0.0, 0.0), |(e, f), s| (e + f64::from(s.em), f + s.f1));
        let denom = n.max(1) as f64;
        Self {
            em: 100.0 * em_sum / denom,
            f1: 100.0 * f1_sum / denom,
            n,
            per_sample,
        }
    }

    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.per_sample.iter().map(|s| s.question_id.as_str())
    }
}

/// Score `(question_id, predicted text)` pairs against `gold`.
pub fn evaluate(predictions: &[(String, String)], gold: &GoldSet) -> Result<ScoreReport> {
    if predictions.is_empty() {
        return Err(Error::usage("no predictions"));
    }
    let unknown: Vec<&str> = predictions
        .iter()
        .filter(|(q, _)| !gold.contains(q))
        .map(|(q, _)| q.as_str())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::usage(format!(
            "predictions for unknown question ids: {}",
            unknown.join(", ")
        )));
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (q, _) in predictions {
        *seen.entry(q).or_default() += 1;
    }
    let dups: Vec<&str> = seen.iter().filter(|(_, &c)| c > 1).map(|(q, _)| *q).collect();
    if !dups.is_empty() {
        return Err(Error::usage(format!("duplicate predictions for: {}", dups.join(", "))));
    }
    let samples = predictions
        .iter()
        .map(|(q, text)| {
            let answers = &gold.get(q).expect("checked above").answers;
            SampleScore {
                question_id: q.clone(),
                em: exact_match(text, answers),
                f1: f1(text, answers),
                prediction: text.clone(),
            }
        })
        .collect();
    Ok(ScoreReport::from_samples(samples))
}

/// One line of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub dataset: String,
    pub em: f64,
    pub f1: f64,
    pub n: usize,
}

impl SummaryRow {
    pub fn new(method: impl Into<String>, dataset: impl Into<String>, report: &ScoreReport) -> Self {
        Self {
            method: method.into(),
            dataset: dataset.into(),
            em: report.em,
            f1: report.f1,
            n: report.n,
        }
    }
}

/// Column header of [`summary_tsv`].
pub const SUMMARY_HEADER: &str = "method\tdataset\tem\tf1\tn";
/// Column header of [`per_sample_tsv`].
pub const PER_SAMPLE_HEADER: &str = "question_id\tem\tf1\tprediction";

/// Tab-separated summary ordered by method, then dataset.
pub fn summary_tsv(rows: &[SummaryRow]) -> String {
    let mut rows: Vec<&SummaryRow> = rows.iter().collect();
    rows.sort_by(|a, b| (&a.method, &a.dataset).cmp(&(&b.method, &b.dataset)));
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\t{}\n",
            escape_field(&r.method),
            escape_field(&r.dataset),
            r.em,
            r.f1,
            r.n
        ));
    }
    out
}

pub fn per_sample_tsv(report: &ScoreReport) -> String {
    let mut out = format!("{PER_SAMPLE_HEADER}\n");
    for s in &report.per_sample {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{}\n",
            escape_field(&s.question_id),
            s.em,
            s.f1,
            escape_field(&s.prediction)
        ));
    }
    out
}

/// Backslash-escape characters that would break a tab-separated row.
pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}
