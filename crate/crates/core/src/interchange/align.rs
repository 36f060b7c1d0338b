use serde::{Deserialize, Serialize};

use super::{AlignedBundle, CharDistributionPair, PredictionRecord};
use crate::error::{Error, Result};

/// How a token's probability is spread over its characters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassRule {
    /// Every kept character carries the token's full probability.
    #[default]
    Replicate,
    /// The probability is divided evenly over the token's kept characters.
    Divide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Characters dropped in addition to whitespace.
    pub ignorable: Vec<char>,
    pub mass: MassRule,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            ignorable: vec!['\u{FFFD}'],
            mass: MassRule::Replicate,
        }
    }
}

impl AlignConfig {
    pub fn is_ignorable(&self, c: char) -> bool {
        c.is_whitespace() || self.ignorable.contains(&c)
    }
}

fn align_on(record: &PredictionRecord, chars: &[char], cfg: &AlignConfig) -> Result<CharDistributionPair> {
    let n = chars.len();
    let mut pair = CharDistributionPair {
        start: vec![0.0; n],
        end: vec![0.0; n],
        keep_mask: vec![false; n],
    };
    for (k, tok) in record.tokens.iter().enumerate() {
        if tok.char_end > n || tok.char_start >= tok.char_end {
            return Err(Error::Alignment {
                model_id: record.model_id.clone(),
                message: format!(
                    "token {k} [{}, {}) does not fit context of {n} characters",
                    tok.char_start, tok.char_end
                ),
            });
        }
        let kept = (tok.char_start..tok.char_end)
            .filter(|&c| !cfg.is_ignorable(chars[c]))
            .count();
        if kept == 0 {
            continue;
        }
        let (ps, pe) = match cfg.mass {
            MassRule::Replicate => (record.start_probs[k], record.end_probs[k]),
            MassRule::Divide => (
                record.start_probs[k] / kept as f64,
                record.end_probs[k] / kept as f64,
            ),
        };
        for c in tok.char_start..tok.char_end {
            if cfg.is_ignorable(chars[c]) {
                continue;
            }
            pair.start[c] = ps;
            pair.end[c] = pe;
            pair.keep_mask[c] = true;
        }
    }
    Ok(pair)
}

/// Project a record's token distributions onto the characters of its own
/// context. Whitespace, configured ignorable characters and characters outside
/// every token are masked with value 0.
pub fn align_to_characters(record: &PredictionRecord, cfg: &AlignConfig) -> Result<CharDistributionPair> {
    let chars: Vec<char> = record.context.chars().collect();
    align_on(record, &chars, cfg)
}

/// Align all models' records for one question onto `context`. A character is
/// kept only when every model covers it and it is not ignorable.
pub fn build_bundle(records: &[PredictionRecord], context: &str, cfg: &AlignConfig) -> Result<AlignedBundle> {
    let first = records
        .first()
        .ok_or_else(|| Error::usage("cannot build a bundle from zero records"))?;
    if let Some(other) = records.iter().find(|r| r.question_id != first.question_id) {
        return Err(Error::usage(format!(
            "mixed question ids in one bundle: {} and {}",
            first.question_id, other.question_id
        )));
    }
    let chars: Vec<char> = context.chars().collect();
    let mut pairs = records
        .iter()
        .map(|r| align_on(r, &chars, cfg))
        .collect::<Result<Vec<_>>>()?;

    let shared: Vec<bool> = (0..chars.len())
        .map(|c| pairs.iter().all(|p| p.keep_mask[c]))
        .collect();
    for p in &mut pairs {
        p.keep_mask.clone_from(&shared);
        p.apply_mask();
    }
    Ok(AlignedBundle {
        question_id: first.question_id.clone(),
        context: context.to_string(),
        per_model: records.iter().map(|r| r.model_id.clone()).zip(pairs).collect(),
    })
}
