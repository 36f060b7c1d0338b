//! `validate`: check interchange files and report every problem found.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use spanfuse_core::interchange::{check_gold_text, check_prediction_text, FileCheck};
use spanfuse_core::Error;

fn check(path: &Path, f: fn(&Path, &str) -> FileCheck) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let result = f(path, &text);
    for e in &result.errors {
        eprintln!("{e}");
    }
    println!(
        "{}: {} records, {} errors",
        path.display(),
        result.n_records,
        result.errors.len()
    );
    Ok(result.errors.len())
}

pub fn run(predictions: &[PathBuf], gold: &[PathBuf]) -> Result<()> {
    if predictions.is_empty() && gold.is_empty() {
        bail!(Error::Usage("nothing to validate".into()));
    }
    let mut errors = 0;
    for p in predictions {
        errors += check(p, check_prediction_text)?;
    }
    for g in gold {
        errors += check(g, check_gold_text)?;
    }
    if errors > 0 {
        bail!(Error::Usage(format!("{errors} validation errors")));
    }
    Ok(())
}
