use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{GoldAnswer, PredictionRecord};
use crate::error::{Error, Result};

fn parse_lines<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn to_lines<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        // Plain data structs with string keys cannot fail to serialize.
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_prediction_lines(path: &Path, text: &str) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> = parse_lines(path, text)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

/// Load a prediction dump, one JSON object per line, validating every record.
pub fn load_prediction_file(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    parse_prediction_lines(path, &read(path)?)
}

pub fn predictions_to_string(records: &[PredictionRecord]) -> String {
    to_lines(records)
}

pub fn write_prediction_file(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_lines(records)).map_err(|e| Error::io(path, e))
}

pub fn parse_gold_lines(path: &Path, text: &str) -> Result<Vec<GoldAnswer>> {
    let golds: Vec<GoldAnswer> = parse_lines(path, text)?;
    for g in &golds {
        g.validate()?;
    }
    Ok(golds)
}

pub fn load_gold_file(path: impl AsRef<Path>) -> Result<Vec<GoldAnswer>> {
    let path = path.as_ref();
    parse_gold_lines(path, &read(path)?)
}

pub fn write_gold_file(path: impl AsRef<Path>, golds: &[GoldAnswer]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_lines(golds)).map_err(|e| Error::io(path, e))
}

/// Outcome of checking every line of a file instead of stopping at the first
/// problem. Each error is reported against its 1-based line.
#[derive(Debug, Default)]
pub struct FileCheck {
    pub n_records: usize,
    pub errors: Vec<Error>,
}

impl FileCheck {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

fn check_lines<T: DeserializeOwned>(
    path: &Path,
    text: &str,
    validate: impl Fn(&T) -> Result<()>,
    key: impl Fn(&T) -> String,
) -> FileCheck {
    let mut check = FileCheck::default();
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return check;
    }
    let mut seen = HashSet::new();
    for (i, line) in body.split('\n').enumerate() {
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        match serde_json::from_str::<T>(line) {
            Err(e) => check.errors.push(fail(e.to_string())),
            Ok(item) => {
                check.n_records += 1;
                if let Err(e) = validate(&item) {
                    check.errors.push(fail(e.to_string()));
                }
                let k = key(&item);
                if !seen.insert(k.clone()) {
                    check.errors.push(fail(format!("duplicate record {k}")));
                }
            }
        }
    }
    check
}

/// Check a prediction dump: syntax, record invariants and uniqueness of
/// `(model_id, question_id)`.
pub fn check_prediction_text(path: &Path, text: &str) -> FileCheck {
    check_lines(path, text, PredictionRecord::validate, |r: &PredictionRecord| {
        format!("{}/{}", r.model_id, r.question_id)
    })
}

pub fn check_gold_text(path: &Path, text: &str) -> FileCheck {
    check_lines(path, text, GoldAnswer::validate, |g: &GoldAnswer| g.question_id.clone())
}
