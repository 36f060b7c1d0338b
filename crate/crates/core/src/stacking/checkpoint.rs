//! JSON checkpoint of a [`StackingModel`].
//!
//! Floats are written in shortest round-trip form, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, FeatureConfig, Params, StackingModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "spanfuse-stacking";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    n_models: usize,
    seed: u64,
    feature_config: FeatureConfig,
    layers: Vec<LayerRecord>,
}

fn to_file(model: &StackingModel) -> CheckpointFile {
    CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        n_models: model.n_models,
        seed: model.seed,
        feature_config: model.feature_config.clone(),
        layers: model
            .params
            .layers
            .iter()
            .map(|l| LayerRecord {
                inputs: l.inputs(),
                outputs: l.outputs(),
                weight: l.weight.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
    }
}

fn from_file(file: CheckpointFile) -> Result<StackingModel> {
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format '{}'", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    file.feature_config.validate()?;
    let expected = StackingModel::layer_shapes(&file.feature_config, file.n_models);
    if expected.len() != file.layers.len() {
        return Err(Error::Checkpoint(format!(
            "{} layers stored, configuration implies {}",
            file.layers.len(),
            expected.len()
        )));
    }
    let mut layers = Vec::with_capacity(expected.len());
    for (k, (rec, (i, o))) in file.layers.into_iter().zip(expected).enumerate() {
        if (rec.inputs, rec.outputs) != (i, o) || rec.weight.len() != i * o || rec.bias.len() != o {
            return Err(Error::Checkpoint(format!("layer {k} does not match shape {i}x{o}")));
        }
        let weight = Array2::from_shape_vec((i, o), rec.weight)
            .map_err(|e| Error::Checkpoint(format!("layer {k}: {e}")))?;
        layers.push(Dense {
            weight,
            bias: Array1::from(rec.bias),
        });
    }
    let params = Params { layers };
    if !params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(StackingModel {
        feature_config: file.feature_config,
        n_models: file.n_models,
        params,
        seed: file.seed,
    })
}

/// Write atomically: the checkpoint goes to a sibling temporary file that is
/// renamed into place, and is removed again on any failure.
pub fn save_checkpoint(model: &StackingModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !model.params.all_finite() {
        return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
    }
    let text = serde_json::to_string(&to_file(model)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::usage(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let written = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(text.as_bytes())?;
            f.write_all(b"\n")?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<StackingModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_file(file)
}
