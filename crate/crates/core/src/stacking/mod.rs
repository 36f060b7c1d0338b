//! Trained aggregator over base-model distributions.
//!
//! Every kept character becomes one row of features: for each model, a window
//! of `2l+1` start values and `2l+1` end values centred on the character,
//! followed (optionally) by the entropies of that model's start and end
//! distributions. A dense trunk feeds two heads that score each row as a start
//! and as an end; scores are normalized over the question's kept characters.

mod checkpoint;
mod network;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::AlignedBundle;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use network::{forward, stack_combine, Dense, Params, StackingModel};
pub use train::{
    fit, loss_and_gradient, prepare_example, train, EpochStats, PreparedExample, TrainConfig, TrainOutcome,
    TrainingSample,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub window_half_size: usize,
    pub include_entropy: bool,
    pub trunk_widths: Vec<usize>,
    pub branch_width: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_half_size: 2,
            include_entropy: true,
            trunk_widths: vec![256, 128, 64],
            branch_width: 64,
        }
    }
}

impl FeatureConfig {
    pub fn window(&self) -> usize {
        2 * self.window_half_size + 1
    }

    pub fn per_model_dim(&self) -> usize {
        2 * self.window() + if self.include_entropy { 2 } else { 0 }
    }

    pub fn feature_dim(&self, n_models: usize) -> usize {
        n_models * self.per_model_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trunk_widths.contains(&0) || self.branch_width == 0 {
            return Err(Error::usage("layer widths must be positive"));
        }
        Ok(())
    }
}

/// Shannon entropy (natural log) of `dist` after renormalizing it to sum to 1.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::usage("entropy needs finite non-negative values"));
    }
    let total: f64 = dist.iter().sum();
    if total <= 0.0 {
        return Err(Error::degenerate("entropy of an all-zero vector"));
    }
    let h = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Feature rows for the kept characters of one bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `positions.len() × feature_dim`.
    pub data: Array2<f64>,
    /// Grid position of each row.
    pub positions: Vec<usize>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.positions.len()
    }
}

pub fn build_features(bundle: &AlignedBundle, cfg: &FeatureConfig) -> FeatureMatrix {
    let keep = bundle.keep_mask();
    let n = keep.len();
    let positions: Vec<usize> = (0..n).filter(|&t| keep[t]).collect();
    let l = cfg.window_half_size as isize;
    let per_model = cfg.per_model_dim();
    let mut data = Array2::<f64>::zeros((positions.len(), cfg.feature_dim(bundle.n_models())));

    for (i, pair) in bundle.pairs().enumerate() {
        let kept = |v: &[f64]| -> Vec<f64> { positions.iter().map(|&t| v[t]).collect() };
        // A model whose kept mass is zero carries no uncertainty signal.
        let ent_s = entropy(&kept(&pair.start)).unwrap_or(0.0);
        let ent_e = entropy(&kept(&pair.end)).unwrap_or(0.0);
        let base = i * per_model;
        let at = |v: &[f64], t: isize| -> f64 {
            if t < 0 || t as usize >= n || !keep[t as usize] {
                0.0
            } else {
                v[t as usize]
            }
        };
        for (row, &t) in positions.iter().enumerate() {
            let mut col = base;
            for v in [&pair.start, &pair.end] {
                for d in -l..=l {
                    data[[row, col]] = at(v, t as isize + d);
                    col += 1;
                }
            }
            if cfg.include_entropy {
                data[[row, col]] = ent_s;
                data[[row, col + 1]] = ent_e;
            }
        }
    }
    FeatureMatrix { data, positions }
}
