use ndarray::{concatenate, Array1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward_cached, softmax};
use super::{build_features, stack_combine, FeatureConfig, FeatureMatrix, Params, StackingModel};
use crate::error::{Error, Result};
use crate::interchange::AlignedBundle;
use crate::scoring::{extract_answer, DEFAULT_MAX_SPAN_CHARS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Examples (questions) per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Stop as soon as the validation loss reaches this value (0 disables).
    pub target_val_loss: f64,
    pub seed: u64,
    /// Span cap used when measuring validation exact-span accuracy.
    pub max_span_chars: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            validation_fraction: 0.1,
            target_val_loss: 0.0,
            seed: 0,
            max_span_chars: DEFAULT_MAX_SPAN_CHARS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage("learning rate must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::usage("validation fraction must lie strictly between 0 and 1"));
        }
        if !(self.target_val_loss >= 0.0 && self.target_val_loss.is_finite()) {
            return Err(Error::usage("target validation loss must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::usage("invalid Adam hyper-parameters"));
        }
        Ok(())
    }
}

/// A bundle with its inclusive gold character span.
pub type TrainingSample = (AlignedBundle, (usize, usize));

/// Features of one question with the feature rows of its gold boundaries.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub features: FeatureMatrix,
    pub gold_rows: (usize, usize),
    pub gold_span: (usize, usize),
    bundle: AlignedBundle,
}

/// `None` when either gold boundary is not a kept character.
pub fn prepare_example(bundle: &AlignedBundle, gold: (usize, usize), cfg: &FeatureConfig) -> Option<PreparedExample> {
    let features = build_features(bundle, cfg);
    let row_of = |t: usize| features.positions.binary_search(&t).ok();
    let gold_rows = (row_of(gold.0)?, row_of(gold.1)?);
    Some(PreparedExample {
        features,
        gold_rows,
        gold_span: gold,
        bundle: bundle.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-example loss over the epoch's optimizer steps.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Percentage of validation questions whose extracted span equals the
    /// gold span exactly.
    pub val_exact: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: StackingModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    /// Samples dropped because their gold span is not on the kept grid.
    pub dropped: usize,
}

/// Mean loss over `batch` and its gradient. The loss of one example is the
/// sum of the start and end cross-entropies at the gold rows.
pub fn loss_and_gradient(model: &StackingModel, batch: &[&PreparedExample]) -> (f64, Params) {
    let views: Vec<ArrayView2<f64>> = batch.iter().map(|e| e.features.data.view()).collect();
    let x = concatenate(Axis(0), &views).expect("feature widths agree");
    let acts = forward_cached(model, x.view());
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = [Array1::zeros(x.nrows()), Array1::zeros(x.nrows())];
    let mut offset = 0;
    for ex in batch {
        let rows = ex.features.n_rows();
        for (head, gold) in [ex.gold_rows.0, ex.gold_rows.1].into_iter().enumerate() {
            let logits = acts.logits[head].slice(ndarray::s![offset..offset + rows]).to_vec();
            let p = softmax(&logits);
            loss += neg_log_softmax(&logits, gold) * scale;
            for (r, pr) in p.iter().enumerate() {
                let target = if r == gold { 1.0 } else { 0.0 };
                dlogits[head][offset + r] = (pr - target) * scale;
            }
        }
        offset += rows;
    }
    let grads = backward(model, &acts, [&dlogits[0], &dlogits[1]]);
    (loss, grads)
}

fn mean_loss(model: &StackingModel, examples: &[PreparedExample]) -> f64 {
    let total: f64 = examples.iter().map(|e| loss_and_gradient_value(model, e)).sum();
    total / examples.len() as f64
}

fn loss_and_gradient_value(model: &StackingModel, ex: &PreparedExample) -> f64 {
    let acts = forward_cached(model, ex.features.data.view());
    neg_log_softmax(&acts.logits[0].to_vec(), ex.gold_rows.0) + neg_log_softmax(&acts.logits[1].to_vec(), ex.gold_rows.1)
}

/// `-ln softmax(logits)[gold]`, computed without forming the probability.
fn neg_log_softmax(logits: &[f64], gold: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[gold]
}

fn exact_span_rate(model: &StackingModel, examples: &[PreparedExample], max_span_chars: usize) -> f64 {
    let hits = examples
        .iter()
        .filter(|ex| {
            stack_combine(model, &ex.bundle)
                .and_then(|pair| extract_answer(&ex.bundle.context, &pair, max_span_chars))
                .is_ok_and(|a| (a.span.start, a.text_end) == ex.gold_span)
        })
        .count();
    100.0 * hits as f64 / examples.len().max(1) as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grads: &Params, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let mut theta = params.to_vec();
        for (i, g) in grads.to_vec().into_iter().enumerate() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        params.set_from_slice(&theta);
    }
}

fn prepare_all(samples: &[TrainingSample], fcfg: &FeatureConfig, n_models: usize) -> Result<(Vec<PreparedExample>, usize)> {
    let mut out = Vec::with_capacity(samples.len());
    let mut dropped = 0;
    for (bundle, gold) in samples {
        if bundle.n_models() != n_models {
            return Err(Error::usage(format!(
                "question {} has {} models, expected {n_models}",
                bundle.question_id,
                bundle.n_models()
            )));
        }
        match prepare_example(bundle, *gold, fcfg) {
            Some(ex) => out.push(ex),
            None => dropped += 1,
        }
    }
    Ok((out, dropped))
}

/// Train on `train_set`, early-stopping on `val_set`.
pub fn fit(
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    cfg: &TrainConfig,
    fcfg: &FeatureConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n_models = train_set
        .first()
        .map(|(b, _)| b.n_models())
        .ok_or_else(|| Error::usage("empty training set"))?;
    let (train, d1) = prepare_all(train_set, fcfg, n_models)?;
    let (val, d2) = prepare_all(val_set, fcfg, n_models)?;
    let dropped = d1 + d2;
    if dropped > 0 {
        log::warn!("dropped {dropped} samples whose gold span is not on the kept grid");
    }
    if train.is_empty() {
        return Err(Error::usage("no usable training samples"));
    }
    let val = if val.is_empty() { train.clone() } else { val };

    let mut model = StackingModel::new(fcfg.clone(), n_models, cfg.seed)?;
    let mut best = model.params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut since_best = 0usize;
    let mut history = Vec::new();
    let mut adam = Adam::new(model.params.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0fb_a7c4);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = loss_and_gradient(&model, &batch);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss * batch.len() as f64;
            adam.update(&mut model.params, &grads, cfg);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = mean_loss(&model, &val);
        if !val_loss.is_finite() || !model.params.all_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_exact: exact_span_rate(&model, &val, cfg.max_span_chars),
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = model.params.clone();
            best_epoch = Some(epoch);
            since_best = 0;
            if val_loss <= cfg.target_val_loss {
                break;
            }
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.params = best;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        dropped,
    })
}

/// Shuffle with the training seed, hold out `validation_fraction` of the
/// samples for early stopping, and [`fit`] on the rest.
pub fn train(dataset: &[TrainingSample], cfg: &TrainConfig, fcfg: &FeatureConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::usage("empty training set"));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_val = if dataset.len() < 2 {
        0
    } else {
        ((dataset.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, dataset.len() - 1)
    };
    let val: Vec<TrainingSample> = idx[..n_val].iter().map(|&i| dataset[i].clone()).collect();
    let tr: Vec<TrainingSample> = idx[n_val..].iter().map(|&i| dataset[i].clone()).collect();
    fit(&tr, &val, cfg, fcfg)
}
