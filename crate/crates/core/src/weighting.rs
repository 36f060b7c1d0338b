//! Untrained combiners: element-wise equal weighting, accuracy-power unequal
//! weighting, and the one-hot transform used for non-probabilistic inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{AlignedBundle, CharDistributionPair};

/// Exponent used by `unequal-fixed` when none is given.
pub const DEFAULT_FIXED_ALPHA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineKind {
    Mean,
    Multiply,
    Max,
    Min,
    GeometricMean,
}

impl CombineKind {
    pub const ALL: [CombineKind; 5] = [
        CombineKind::Mean,
        CombineKind::Multiply,
        CombineKind::Max,
        CombineKind::Min,
        CombineKind::GeometricMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CombineKind::Mean => "mean",
            CombineKind::Multiply => "multiply",
            CombineKind::Max => "max",
            CombineKind::Min => "min",
            CombineKind::GeometricMean => "geomean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightMode {
    EqualWeight(CombineKind),
    UnequalFixed(f64),
    UnequalAuto,
}

impl WeightMode {
    pub fn is_unequal(&self) -> bool {
        !matches!(self, WeightMode::EqualWeight(_))
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightMode::EqualWeight(k) => f.write_str(k.name()),
            WeightMode::UnequalFixed(a) => write!(f, "unequal-fixed:{a}"),
            WeightMode::UnequalAuto => f.write_str("unequal-auto"),
        }
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mode = match s.trim() {
            "mean" => WeightMode::EqualWeight(CombineKind::Mean),
            "multiply" | "mul" => WeightMode::EqualWeight(CombineKind::Multiply),
            "max" => WeightMode::EqualWeight(CombineKind::Max),
            "min" => WeightMode::EqualWeight(CombineKind::Min),
            "geomean" => WeightMode::EqualWeight(CombineKind::GeometricMean),
            "unequal-fixed" => WeightMode::UnequalFixed(DEFAULT_FIXED_ALPHA),
            "unequal-auto" => WeightMode::UnequalAuto,
            other => {
                let alpha = other
                    .strip_prefix("unequal-fixed:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .filter(|a| a.is_finite() && *a >= 0.0)
                    .ok_or_else(|| Error::usage(format!("unknown method '{other}'")))?;
                WeightMode::UnequalFixed(alpha)
            }
        };
        Ok(mode)
    }
}

/// A full weighting recipe: method, per-model accuracies (percentage points)
/// for the unequal modes, and whether inputs are first reduced to one-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub mode: WeightMode,
    pub accuracies: Option<Vec<f64>>,
    pub probabilistic: bool,
}

impl WeightConfig {
    pub fn equal(kind: CombineKind) -> Self {
        Self {
            mode: WeightMode::EqualWeight(kind),
            accuracies: None,
            probabilistic: true,
        }
    }

    pub fn validate(&self, n_models: usize) -> Result<()> {
        if let WeightMode::UnequalFixed(a) = self.mode {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::usage(format!("alpha must be non-negative, got {a}")));
            }
        }
        if self.mode.is_unequal() {
            match &self.accuracies {
                Some(acc) if acc.len() == n_models => {}
                Some(acc) => {
                    return Err(Error::usage(format!(
                        "{} accuracies given for {n_models} models",
                        acc.len()
                    )))
                }
                None => return Err(Error::usage("unequal weighting requires per-model accuracies")),
            }
        }
        if !self.probabilistic
            && !matches!(self.mode, WeightMode::EqualWeight(CombineKind::Mean))
            && !self.mode.is_unequal()
        {
            return Err(Error::usage(format!(
                "'{}' is undefined on one-hot inputs; non-probabilistic mode supports mean and unequal weighting only",
                self.mode
            )));
        }
        Ok(())
    }

    /// Exponent the unequal modes will use, or `None` for equal weighting.
    pub fn alpha(&self) -> Result<Option<f64>> {
        match self.mode {
            WeightMode::EqualWeight(_) => Ok(None),
            WeightMode::UnequalFixed(a) => Ok(Some(a)),
            WeightMode::UnequalAuto => {
                let acc = self
                    .accuracies
                    .as_deref()
                    .ok_or_else(|| Error::usage("unequal weighting requires per-model accuracies"))?;
                Ok(Some(f64::from(auto_alpha(acc)?)))
            }
        }
    }

    /// Normalized model weights for the unequal modes.
    pub fn weights(&self) -> Result<Option<Vec<f64>>> {
        match self.alpha()? {
            None => Ok(None),
            Some(alpha) => {
                let acc = self.accuracies.as_deref().unwrap_or_default();
                accuracy_weights(acc, alpha).map(Some)
            }
        }
    }
}

/// Combine a bundle according to `cfg`.
pub fn combine(bundle: &AlignedBundle, cfg: &WeightConfig) -> Result<CharDistributionPair> {
    cfg.validate(bundle.n_models())?;
    let one_hot;
    let input = if cfg.probabilistic {
        bundle
    } else {
        one_hot = one_hot_bundle(bundle)?;
        &one_hot
    };
    match cfg.mode {
        WeightMode::EqualWeight(kind) => equal_weight_combine(input, kind),
        _ => {
            let w = cfg.weights()?.expect("unequal mode has weights");
            unequal_weight_combine(input, &w)
        }
    }
}

fn one_hot_bundle(bundle: &AlignedBundle) -> Result<AlignedBundle> {
    let per_model = bundle
        .per_model
        .iter()
        .map(|(id, p)| Ok((id.clone(), to_one_hot(p)?)))
        .collect::<Result<_>>()?;
    Ok(AlignedBundle {
        question_id: bundle.question_id.clone(),
        context: bundle.context.clone(),
        per_model,
    })
}

fn check_shared_grid(bundle: &AlignedBundle) -> Result<&CharDistributionPair> {
    let first = bundle
        .pairs()
        .next()
        .ok_or_else(|| Error::usage("cannot combine an empty bundle"))?;
    if bundle
        .pairs()
        .any(|p| p.len() != first.len() || p.start.len() != first.len() || p.end.len() != first.len())
    {
        return Err(Error::usage("bundle pairs are not on a shared grid"));
    }
    Ok(first)
}

/// Product-family combination accumulated as a sum of logarithms. `power`
/// is 1 for the plain product and `1/m` for the geometric mean.
fn log_product(values: &[&[f64]], keep: &[bool], power: f64) -> Vec<f64> {
    let mut logs = ordered_sums(values, keep.len(), |_, x| x.ln());
    for (l, &k) in logs.iter_mut().zip(keep) {
        *l = if k { *l * power } else { f64::NEG_INFINITY };
    }
    // Results are only defined up to a positive factor; rescale when the
    // largest value would underflow so argmax decisions survive.
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if peak.is_finite() && peak < -700.0 { peak } else { 0.0 };
    logs.iter().map(|&l| (l - shift).exp()).collect()
}

/// Element-wise equal-weight combination, applied to start and end
/// independently. Outputs are not renormalized.
pub fn equal_weight_combine(bundle: &AlignedBundle, kind: CombineKind) -> Result<CharDistributionPair> {
    let first = check_shared_grid(bundle)?;
    let keep = first.keep_mask.clone();
    let m = bundle.n_models() as f64;
    let starts: Vec<&[f64]> = bundle.pairs().map(|p| p.start.as_slice()).collect();
    let ends: Vec<&[f64]> = bundle.pairs().map(|p| p.end.as_slice()).collect();

    let fold = |vs: &[&[f64]]| -> Vec<f64> {
        let n = keep.len();
        match kind {
            CombineKind::Mean => weighted_sum(vs, &vec![1.0 / m; vs.len()]),
            CombineKind::Max => (0..n)
                .map(|i| vs.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            CombineKind::Min => (0..n)
                .map(|i| vs.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min))
                .collect(),
            CombineKind::Multiply => log_product(vs, &keep, 1.0),
            CombineKind::GeometricMean => log_product(vs, &keep, 1.0 / m),
        }
    };
    let mut out = CharDistributionPair {
        start: fold(&starts),
        end: fold(&ends),
        keep_mask: keep.clone(),
    };
    out.apply_mask();
    Ok(out)
}

/// Automatic exponent `floor(sqrt(best - second_best))` over accuracies in
/// percentage points.
pub fn auto_alpha(accuracies: &[f64]) -> Result<u32> {
    if accuracies.len() < 2 {
        return Err(Error::usage("automatic alpha needs at least two accuracies"));
    }
    if let Some(a) = accuracies.iter().find(|a| !(0.0..=100.0).contains(*a)) {
        return Err(Error::usage(format!("accuracy {a} outside [0, 100]")));
    }
    let mut sorted = accuracies.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let gap = (sorted[0] - sorted[1]).max(0.0);
    // A gap such as 41.0 - 25.0 must land on 4, not 3.999...
    Ok((gap.sqrt() + 1e-9).floor() as u32)
}

/// Weights proportional to `acc^alpha`, normalized to sum to 1.
pub fn accuracy_weights(accuracies: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::usage(format!("alpha must be non-negative, got {alpha}")));
    }
    if accuracies.is_empty() {
        return Err(Error::usage("no accuracies given"));
    }
    if let Some(a) = accuracies.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::usage(format!("accuracy {a} must be non-negative")));
    }
    // powf(0, 0) == 1, so alpha = 0 always gives equal weights.
    let raw: Vec<f64> = accuracies.iter().map(|a| a.powf(alpha)).collect();
    // Summed in sorted order so that the weights do not depend on model order.
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateWeights(format!(
            "accuracies {accuracies:?} with alpha {alpha} give total weight {total}"
        )));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted element-wise sum of the models' start and end vectors.
pub fn unequal_weight_combine(bundle: &AlignedBundle, weights: &[f64]) -> Result<CharDistributionPair> {
    let first = check_shared_grid(bundle)?;
    if weights.len() != bundle.n_models() {
        return Err(Error::usage(format!(
            "{} weights for {} models",
            weights.len(),
            bundle.n_models()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateWeights(format!("{weights:?}")));
    }
    let starts: Vec<&[f64]> = bundle.pairs().map(|p| p.start.as_slice()).collect();
    let ends: Vec<&[f64]> = bundle.pairs().map(|p| p.end.as_slice()).collect();
    let mut out = CharDistributionPair {
        start: weighted_sum(&starts, weights),
        end: weighted_sum(&ends, weights),
        keep_mask: first.keep_mask.clone(),
    };
    out.apply_mask();
    Ok(out)
}

/// Shared by `Mean` and unequal weighting so uniform weights reproduce the
/// mean bit for bit.
fn weighted_sum(values: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let n = values.first().map_or(0, |v| v.len());
    ordered_sums(values, n, |i, x| weights[i] * x)
}

/// Per-position sum of `term(model, value)`, adding terms in ascending order
/// so the result does not depend on model order.
fn ordered_sums(values: &[&[f64]], n: usize, term: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    let mut buf = Vec::with_capacity(values.len());
    (0..n)
        .map(|pos| {
            buf.clear();
            buf.extend(values.iter().enumerate().map(|(i, v)| term(i, v[pos])));
            buf.sort_by(f64::total_cmp);
            buf.iter().fold(0.0, |acc, t| acc + t)
        })
        .collect()
}

fn argmax_kept(values: &[f64], keep: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &k)) in values.iter().zip(keep).enumerate() {
        if k && v > 0.0 && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Replace each vector by a one-hot at its argmax over kept positions; ties go
/// to the lowest index.
pub fn to_one_hot(pair: &CharDistributionPair) -> Result<CharDistributionPair> {
    let hot = |values: &[f64], which: &str| -> Result<Vec<f64>> {
        let at = argmax_kept(values, &pair.keep_mask)
            .ok_or_else(|| Error::degenerate(format!("{which} vector has no positive kept value")))?;
        let mut v = vec![0.0; values.len()];
        v[at] = 1.0;
        Ok(v)
    };
    Ok(CharDistributionPair {
        start: hot(&pair.start, "start")?,
        end: hot(&pair.end, "end")?,
        keep_mask: pair.keep_mask.clone(),
    })
}
