//! Prediction-dump data model.
//!
//! A [`PredictionRecord`] is one model's token-level start/end distribution
//! for one question. Because models disagree on tokenization, every record is
//! projected onto the characters of the context ([`align`]) and the models
//! for one question are gathered into an [`AlignedBundle`] that shares a
//! single keep mask.

mod align;
mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use align::{align_to_characters, build_bundle, AlignConfig, MassRule};
pub use io::{
    check_gold_text, check_prediction_text, FileCheck,
    load_gold_file, load_prediction_file, parse_gold_lines, parse_prediction_lines,
    predictions_to_string, write_gold_file, write_prediction_file,
};

/// Allowed deviation of a distribution's total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-4;

/// Half-open character range `[char_start, char_end)` of one token, counted
/// in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct TokenSpan {
    pub char_start: usize,
    pub char_end: usize,
}

impl TokenSpan {
    pub fn new(char_start: usize, char_end: usize) -> Self {
        Self {
            char_start,
            char_end,
        }
    }

    pub fn len(&self) -> usize {
        self.char_end.saturating_sub(self.char_start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<(usize, usize)> for TokenSpan {
    fn from((s, e): (usize, usize)) -> Self {
        Self::new(s, e)
    }
}

impl From<TokenSpan> for (usize, usize) {
    fn from(t: TokenSpan) -> Self {
        (t.char_start, t.char_end)
    }
}

/// One model's output for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub model_id: String,
    pub question_id: String,
    pub context: String,
    #[serde(rename = "token_offsets")]
    pub tokens: Vec<TokenSpan>,
    pub start_probs: Vec<f64>,
    pub end_probs: Vec<f64>,
}

impl PredictionRecord {
    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |rule: String| Error::Validation {
            question_id: self.question_id.clone(),
            rule,
        };
        let n = self.tokens.len();
        if n == 0 {
            return Err(fail("record has no tokens".into()));
        }
        if self.start_probs.len() != n || self.end_probs.len() != n {
            return Err(fail(format!(
                "length mismatch: {} tokens, {} start_probs, {} end_probs",
                n,
                self.start_probs.len(),
                self.end_probs.len()
            )));
        }
        for (name, probs) in [("start_probs", &self.start_probs), ("end_probs", &self.end_probs)] {
            if let Some((i, p)) = probs
                .iter()
                .enumerate()
                .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
            {
                return Err(fail(format!("{name}[{i}] = {p} outside [0,1]")));
            }
            let mass: f64 = probs.iter().sum();
            if (mass - 1.0).abs() > MASS_TOLERANCE {
                return Err(fail(format!(
                    "{name}: probability mass {} outside 1±1e-4",
                    format_mass(mass)
                )));
            }
        }
        let context_len = self.context.chars().count();
        let mut prev_end = 0usize;
        for (i, t) in self.tokens.iter().enumerate() {
            if t.char_start >= t.char_end {
                return Err(fail(format!(
                    "empty token {i} [{}, {})",
                    t.char_start, t.char_end
                )));
            }
            if t.char_end > context_len {
                return Err(fail(format!(
                    "token {i} [{}, {}) exceeds context length {context_len}",
                    t.char_start, t.char_end
                )));
            }
            if i > 0 && t.char_start < prev_end {
                return Err(fail(format!(
                    "overlapping tokens: token {i} starts at {} before previous end {prev_end}",
                    t.char_start
                )));
            }
            prev_end = t.char_end;
        }
        Ok(())
    }
}

fn format_mass(mass: f64) -> String {
    let short = format!("{mass:.2}");
    if short == "1.00" {
        format!("{mass:.6}")
    } else {
        short
    }
}

/// Reference answers for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldAnswer {
    pub question_id: String,
    pub context: String,
    pub answers: Vec<String>,
}

impl GoldAnswer {
    pub fn validate(&self) -> Result<()> {
        let fail = |rule: &str| Error::Validation {
            question_id: self.question_id.clone(),
            rule: rule.to_string(),
        };
        if self.answers.is_empty() {
            return Err(fail("no gold answers"));
        }
        if self.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(fail("empty gold answer"));
        }
        Ok(())
    }

    /// Inclusive character span of the first exact occurrence of the first
    /// locatable answer in the context.
    pub fn char_span(&self) -> Option<(usize, usize)> {
        self.answers.iter().find_map(|a| locate_answer(&self.context, a))
    }
}

/// Inclusive `(start, end)` character indices of the first occurrence of
/// `answer` in `context`.
pub fn locate_answer(context: &str, answer: &str) -> Option<(usize, usize)> {
    if answer.is_empty() {
        return None;
    }
    let byte = context.find(answer)?;
    let start = context[..byte].chars().count();
    Some((start, start + answer.chars().count() - 1))
}

/// Gold answers keyed by question id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldSet {
    by_id: BTreeMap<String, GoldAnswer>,
}

impl GoldSet {
    pub fn new(answers: impl IntoIterator<Item = GoldAnswer>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for g in answers {
            g.validate()?;
            if by_id.contains_key(&g.question_id) {
                return Err(Error::Validation {
                    question_id: g.question_id,
                    rule: "duplicate question_id in gold set".into(),
                });
            }
            by_id.insert(g.question_id.clone(), g);
        }
        Ok(Self { by_id })
    }

    pub fn get(&self, question_id: &str) -> Option<&GoldAnswer> {
        self.by_id.get(question_id)
    }

    pub fn contains(&self, question_id: &str) -> bool {
        self.by_id.contains_key(question_id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// Answers in ascending question-id order.
    pub fn iter(&self) -> impl Iterator<Item = &GoldAnswer> {
        self.by_id.values()
    }

    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.by_id.keys().map(String::as_str)
    }

    /// Restrict to the given ids; unknown ids are ignored.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> GoldSet {
        let by_id = ids
            .into_iter()
            .filter_map(|id| self.by_id.get(id).map(|g| (id.to_string(), g.clone())))
            .collect();
        GoldSet { by_id }
    }

    /// Union of several sets; a later duplicate id is a validation error.
    pub fn merged<'a>(sets: impl IntoIterator<Item = &'a GoldSet>) -> Result<GoldSet> {
        GoldSet::new(sets.into_iter().flat_map(|s| s.iter().cloned()))
    }
}

/// Character-level start/end values on a context grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CharDistributionPair {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub keep_mask: Vec<bool>,
}

impl CharDistributionPair {
    pub fn len(&self) -> usize {
        self.keep_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep_mask.is_empty()
    }

    pub fn kept_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
    }

    pub fn n_kept(&self) -> usize {
        self.keep_mask.iter().filter(|&&k| k).count()
    }

    /// Zero every value at a masked position.
    pub(crate) fn apply_mask(&mut self) {
        for (i, &k) in self.keep_mask.iter().enumerate() {
            if !k {
                self.start[i] = 0.0;
                self.end[i] = 0.0;
            }
        }
    }
}

/// All models' character distributions for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedBundle {
    pub question_id: String,
    pub context: String,
    pub per_model: Vec<(String, CharDistributionPair)>,
}

impl AlignedBundle {
    pub fn n_models(&self) -> usize {
        self.per_model.len()
    }

    pub fn grid_len(&self) -> usize {
        self.per_model.first().map_or(0, |(_, p)| p.len())
    }

    pub fn keep_mask(&self) -> &[bool] {
        self.per_model
            .first()
            .map_or(&[][..], |(_, p)| p.keep_mask.as_slice())
    }

    pub fn pairs(&self) -> impl Iterator<Item = &CharDistributionPair> {
        self.per_model.iter().map(|(_, p)| p)
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.per_model.iter().map(|(id, _)| id.as_str())
    }

    /// Single-model view, used to score a base model through the same path as
    /// an ensemble.
    pub fn single(&self, index: usize) -> AlignedBundle {
        AlignedBundle {
            question_id: self.question_id.clone(),
            context: self.context.clone(),
            per_model: vec![self.per_model[index].clone()],
        }
    }
}
