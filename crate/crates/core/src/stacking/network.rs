use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_features, FeatureConfig, FeatureMatrix};
use crate::error::{Error, Result};
use crate::interchange::{AlignedBundle, CharDistributionPair};

/// Affine layer `x W + b` with `W` stored as `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let weight = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// All trainable layers in a fixed order: the trunk, then the start head
/// (hidden, output), then the end head (hidden, output).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<Dense>,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        Params {
            layers: other
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flattened copy, layer by layer, weights (row-major) before biases.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Inverse of [`Params::to_vec`].
    pub fn set_from_slice(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.n_params(), "parameter count mismatch");
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackingModel {
    pub feature_config: FeatureConfig,
    pub n_models: usize,
    pub params: Params,
    pub seed: u64,
}

impl StackingModel {
    /// Fresh model with weights drawn uniformly in `±sqrt(6 / fan_in)` and
    /// zero biases.
    pub fn new(feature_config: FeatureConfig, n_models: usize, seed: u64) -> Result<Self> {
        feature_config.validate()?;
        if n_models == 0 {
            return Err(Error::usage("stacking needs at least one model"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = Self::layer_shapes(&feature_config, n_models);
        let layers = shapes
            .into_iter()
            .map(|(i, o)| Dense::uniform(i, o, &mut rng))
            .collect();
        Ok(Self {
            feature_config,
            n_models,
            params: Params { layers },
            seed,
        })
    }

    /// `(inputs, outputs)` of every layer in [`Params`] order.
    pub fn layer_shapes(cfg: &FeatureConfig, n_models: usize) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = cfg.feature_dim(n_models);
        for &w in &cfg.trunk_widths {
            shapes.push((width, w));
            width = w;
        }
        for _ in 0..2 {
            shapes.push((width, cfg.branch_width));
            shapes.push((cfg.branch_width, 1));
        }
        shapes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_config.feature_dim(self.n_models)
    }

    pub(crate) fn n_trunk(&self) -> usize {
        self.feature_config.trunk_widths.len()
    }

    fn trunk(&self) -> &[Dense] {
        &self.params.layers[..self.n_trunk()]
    }

    fn head(&self, which: usize) -> (&Dense, &Dense) {
        let k = self.n_trunk() + 2 * which;
        (&self.params.layers[k], &self.params.layers[k + 1])
    }
}

fn relu(mut z: Array2<f64>) -> Array2<f64> {
    z.mapv_inplace(|v| v.max(0.0));
    z
}

/// Intermediate values kept for back-propagation.
pub(crate) struct Activations {
    /// Input followed by each trunk layer's post-activation output.
    pub trunk: Vec<Array2<f64>>,
    /// Per head: hidden post-activation.
    pub heads: [Array2<f64>; 2],
    pub logits: [Array1<f64>; 2],
}

pub(crate) fn forward_cached(model: &StackingModel, x: ArrayView2<f64>) -> Activations {
    let mut trunk = vec![x.to_owned()];
    for layer in model.trunk() {
        let h = relu(layer.apply(&trunk.last().unwrap().view()));
        trunk.push(h);
    }
    let top = trunk.last().unwrap().view();
    let run_head = |which: usize| {
        let (hidden, out) = model.head(which);
        let a = relu(hidden.apply(&top));
        let logit = out.apply(&a.view()).index_axis_move(Axis(1), 0);
        (a, logit)
    };
    let (a_s, l_s) = run_head(0);
    let (a_e, l_e) = run_head(1);
    Activations {
        trunk,
        heads: [a_s, a_e],
        logits: [l_s, l_e],
    }
}

/// Gradients of the loss with respect to every parameter, given the
/// loss gradient with respect to each head's logits.
pub(crate) fn backward(model: &StackingModel, acts: &Activations, dlogits: [&Array1<f64>; 2]) -> Params {
    let mut grads = Params::zeros_like(&model.params);
    let nt = model.n_trunk();
    let top = acts.trunk.last().unwrap();
    let mut dtop = Array2::<f64>::zeros(top.raw_dim());
    for which in 0..2 {
        let (hidden, out) = model.head(which);
        let a = &acts.heads[which];
        let dl = dlogits[which].view().insert_axis(Axis(1));
        let k = nt + 2 * which;
        grads.layers[k + 1].weight = a.t().dot(&dl);
        grads.layers[k + 1].bias = dl.sum_axis(Axis(0));
        let mut dz = dl.dot(&out.weight.t());
        dz.zip_mut_with(a, |d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        grads.layers[k].weight = top.t().dot(&dz);
        grads.layers[k].bias = dz.sum_axis(Axis(0));
        dtop += &dz.dot(&hidden.weight.t());
    }
    let mut dh = dtop;
    for i in (0..nt).rev() {
        let h = &acts.trunk[i + 1];
        dh.zip_mut_with(h, |d, &v| {
            if v <= 0.0 {
                *d = 0.0
            }
        });
        let prev = &acts.trunk[i];
        grads.layers[i].weight = prev.t().dot(&dh);
        grads.layers[i].bias = dh.sum_axis(Axis(0));
        if i > 0 {
            dh = dh.dot(&model.params.layers[i].weight.t());
        }
    }
    grads
}

/// Start and end logits for every feature row.
pub fn forward(model: &StackingModel, features: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if features.data.ncols() != model.feature_dim() {
        return Err(Error::usage(format!(
            "feature dimension {} does not match model input {}",
            features.data.ncols(),
            model.feature_dim()
        )));
    }
    let acts = forward_cached(model, features.data.view());
    let [s, e] = acts.logits;
    Ok((s.to_vec(), e.to_vec()))
}

/// Normalized exponential of `logits`, computed with the usual max shift.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - peak).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Ensemble distributions from a trained model. Masked positions are 0 and
/// each vector sums to 1 over the kept positions.
pub fn stack_combine(model: &StackingModel, bundle: &AlignedBundle) -> Result<CharDistributionPair> {
    if bundle.n_models() != model.n_models {
        return Err(Error::usage(format!(
            "model expects {} base models, bundle has {}",
            model.n_models,
            bundle.n_models()
        )));
    }
    let features = build_features(bundle, &model.feature_config);
    let n = bundle.grid_len();
    let mut out = CharDistributionPair {
        start: vec![0.0; n],
        end: vec![0.0; n],
        keep_mask: bundle.keep_mask().to_vec(),
    };
    if features.n_rows() == 0 {
        return Ok(out);
    }
    let (ls, le) = forward(model, &features)?;
    for ((&t, ps), pe) in features.positions.iter().zip(softmax(&ls)).zip(softmax(&le)) {
        out.start[t] = ps;
        out.end[t] = pe;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> FeatureConfig {
        FeatureConfig {
            window_half_size: 1,
            include_entropy: true,
            trunk_widths: vec![6, 5],
            branch_width: 4,
        }
    }

    fn bundle(n_models: usize) -> AlignedBundle {
        let n = 7;
        AlignedBundle {
            question_id: "q".into(),
            context: "abc def".into(),
            per_model: (0..n_models)
                .map(|i| {
                    let raw: Vec<f64> = (0..n).map(|t| ((t + i) % 4 + 1) as f64).collect();
                    let keep: Vec<bool> = (0..n).map(|t| t != 3).collect();
                    let total: f64 = raw.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v).sum();
                    let v: Vec<f64> = raw.iter().zip(&keep).map(|(r, &k)| if k { r / total } else { 0.0 }).collect();
                    (
                        format!("m{i}"),
                        CharDistributionPair {
                            start: v.clone(),
                            end: v.iter().rev().copied().collect(),
                            keep_mask: keep,
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn zero_parameters_give_uniform_output() {
        let mut model = StackingModel::new(small_config(), 2, 1).unwrap();
        let z = Params::zeros_like(&model.params);
        model.params = z;
        let out = stack_combine(&model, &bundle(2)).unwrap();
        for t in 0..7 {
            let expected = if t == 3 { 0.0 } else { 1.0 / 6.0 };
            assert!((out.start[t] - expected).abs() < 1e-15);
            assert!((out.end[t] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn outputs_are_normalized_and_deterministic() {
        let model = StackingModel::new(small_config(), 2, 42).unwrap();
        let b = bundle(2);
        let a = stack_combine(&model, &b).unwrap();
        let again = stack_combine(&model, &b).unwrap();
        assert_eq!(a, again);
        assert!((a.start.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((a.end.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(a.start[3], 0.0);
    }

    #[test]
    fn same_seed_same_logits() {
        let b = bundle(3);
        let f = build_features(&b, &small_config());
        let m1 = StackingModel::new(small_config(), 3, 9).unwrap();
        let m2 = StackingModel::new(small_config(), 3, 9).unwrap();
        assert_eq!(forward(&m1, &f).unwrap(), forward(&m2, &f).unwrap());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let model = StackingModel::new(small_config(), 2, 1).unwrap();
        assert!(matches!(stack_combine(&model, &bundle(3)), Err(Error::Usage(_))));
        let f = build_features(&bundle(3), &small_config());
        assert!(matches!(forward(&model, &f), Err(Error::Usage(_))));
    }

    #[test]
    fn default_shapes_follow_the_layer_widths() {
        let shapes = StackingModel::layer_shapes(&FeatureConfig::default(), 5);
        assert_eq!(shapes, vec![(60, 256), (256, 128), (128, 64), (64, 64), (64, 1), (64, 64), (64, 1)]);
    }
}
