//! Several models' prediction dumps grouped by question.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interchange::{build_bundle, AlignConfig, AlignedBundle, CharDistributionPair, GoldSet, PredictionRecord};
use crate::scoring::extract_answer;
use crate::stacking::TrainingSample;

/// Records of every model for every question. Model order is the order in
/// which model ids first appear in the input; questions are kept in ascending
/// id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPool {
    model_ids: Vec<String>,
    by_question: BTreeMap<String, Vec<PredictionRecord>>,
}

impl PredictionPool {
    /// Every model must answer exactly the same set of questions, once each,
    /// over the same context.
    pub fn from_records(records: impl IntoIterator<Item = PredictionRecord>) -> Result<Self> {
        let mut model_ids: Vec<String> = Vec::new();
        let mut raw: BTreeMap<String, BTreeMap<usize, PredictionRecord>> = BTreeMap::new();
        for r in records {
            let m = match model_ids.iter().position(|id| *id == r.model_id) {
                Some(m) => m,
                None => {
                    model_ids.push(r.model_id.clone());
                    model_ids.len() - 1
                }
            };
            let slot = raw.entry(r.question_id.clone()).or_default();
            if slot.contains_key(&m) {
                return Err(Error::Validation {
                    question_id: r.question_id,
                    rule: format!("duplicate record for model {}", r.model_id),
                });
            }
            slot.insert(m, r);
        }
        if model_ids.is_empty() {
            return Err(Error::usage("no prediction records"));
        }
        let mut by_question = BTreeMap::new();
        for (qid, per_model) in raw {
            if per_model.len() != model_ids.len() {
                let missing: Vec<&str> = (0..model_ids.len())
                    .filter(|m| !per_model.contains_key(m))
                    .map(|m| model_ids[m].as_str())
                    .collect();
                return Err(Error::Validation {
                    question_id: qid,
                    rule: format!("no prediction from model(s) {}", missing.join(", ")),
                });
            }
            let list: Vec<PredictionRecord> = per_model.into_values().collect();
            if list.iter().any(|r| r.context != list[0].context) {
                return Err(Error::Validation {
                    question_id: qid,
                    rule: "models disagree on the context".into(),
                });
            }
            by_question.insert(qid, list);
        }
        Ok(Self { model_ids, by_question })
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn len(&self) -> usize {
        self.by_question.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_question.is_empty()
    }

    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.by_question.keys().map(String::as_str)
    }

    pub fn records(&self, question_id: &str) -> Option<&[PredictionRecord]> {
        self.by_question.get(question_id).map(Vec::as_slice)
    }

    /// Keep only the listed questions; unknown ids are ignored.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> PredictionPool {
        let by_question = ids
            .into_iter()
            .filter_map(|id| self.by_question.get(id).map(|r| (id.to_string(), r.clone())))
            .collect();
        PredictionPool {
            model_ids: self.model_ids.clone(),
            by_question,
        }
    }

    /// One aligned bundle per question, in question order. When `gold` is
    /// given every question must have a gold entry with the same context.
    pub fn bundles(&self, gold: Option<&GoldSet>, cfg: &AlignConfig) -> Result<Vec<AlignedBundle>> {
        self.by_question
            .par_iter()
            .map(|(qid, records)| {
                if let Some(gold) = gold {
                    let g = gold.get(qid).ok_or_else(|| Error::Validation {
                        question_id: qid.clone(),
                        rule: "question has no gold answer".into(),
                    })?;
                    if g.context != records[0].context {
                        return Err(Error::Validation {
                            question_id: qid.clone(),
                            rule: "prediction context differs from the gold context".into(),
                        });
                    }
                }
                build_bundle(records, &records[0].context, cfg)
            })
            .collect()
    }
}

/// Apply `combine` to every bundle and extract the answer text, preserving
/// bundle order. Returns `(question_id, answer)` pairs.
pub fn predict_answers<F>(bundles: &[AlignedBundle], max_span_chars: usize, combine: F) -> Result<Vec<(String, String)>>
where
    F: Fn(&AlignedBundle) -> Result<CharDistributionPair> + Sync,
{
    bundles
        .par_iter()
        .map(|b| {
            let pair = combine(b)?;
            let answer = extract_answer(&b.context, &pair, max_span_chars)?;
            Ok((b.question_id.clone(), answer.text))
        })
        .collect()
}

/// Pair bundles with their gold character span; questions whose answer
/// cannot be located in the context are skipped and counted.
pub fn training_samples(bundles: &[AlignedBundle], gold: &GoldSet) -> (Vec<TrainingSample>, usize) {
    let mut skipped = 0;
    let mut out = Vec::with_capacity(bundles.len());
    for b in bundles {
        match gold.get(&b.question_id).and_then(|g| g.char_span()) {
            Some(span) => out.push((b.clone(), span)),
            None => skipped += 1,
        }
    }
    (out, skipped)
}
