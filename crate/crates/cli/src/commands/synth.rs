//! `synth`: write a synthetic prediction pool described by a TOML spec.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use spanfuse_core::synth::generate_pool;
use spanfuse_core::{Error, SynthSpec};

use crate::config::ensure_dir;

pub fn run(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::Io {
        path: spec_path.to_path_buf(),
        source: e,
    })?;
    let mut spec = SynthSpec::from_toml_str(&text).with_context(|| format!("in {}", spec_path.display()))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let pool = generate_pool(&spec)?;
    ensure_dir(out_dir)?;
    for path in pool.write_to_dir(out_dir)? {
        println!("{}", path.display());
    }
    println!("{}", out_dir.join("gold.jsonl").display());
    Ok(())
}
