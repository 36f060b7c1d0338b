//! Shared generators and independent oracles for integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanfuse_core::pool::{predict_answers, training_samples, PredictionPool};
use spanfuse_core::scoring::{evaluate, extract_answer};
use spanfuse_core::stacking::{loss_and_gradient, prepare_example, stack_combine, train, TrainingSample};
use spanfuse_core::synth::{generate_pool, SynthModel, SynthSpec};
use spanfuse_core::weighting::{equal_weight_combine, CombineKind};
use spanfuse_core::{
    AlignConfig, AlignedBundle, CharDistributionPair, FeatureConfig, GoldSet, ScoreReport, StackingModel, TrainConfig,
};

/// Values with frequent exact ties so that tie-breaking is exercised.
pub fn arb_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        3 => prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 1.0]),
        2 => 0.0..=1.0f64,
    ]
}

/// A single grid of `1..=max_len` positions with a random keep mask; masked
/// positions carry 0 as the aligner would produce.
pub fn arb_pair(max_len: usize) -> impl Strategy<Value = CharDistributionPair> {
    (1..=max_len)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(arb_value(), n),
                prop::collection::vec(arb_value(), n),
                prop::collection::vec(prop::bool::weighted(0.8), n),
            )
        })
        .prop_map(|(mut start, mut end, keep_mask)| {
            for t in 0..keep_mask.len() {
                if !keep_mask[t] {
                    start[t] = 0.0;
                    end[t] = 0.0;
                }
            }
            CharDistributionPair { start, end, keep_mask }
        })
}

/// Exhaustive search written independently of the library: enumerate every
/// ordered pair, filter feasibility, and take the maximum under the ordering
/// (higher score, then lower start, then lower end).
pub fn brute_force_span(pair: &CharDistributionPair, cap: usize) -> Option<(usize, usize, f64)> {
    let n = pair.start.len();
    let mut candidates = Vec::new();
    for s in 0..n {
        for e in 0..n {
            if pair.keep_mask[s] && pair.keep_mask[e] && s <= e && e - s < cap {
                candidates.push((s, e, pair.start[s] * pair.end[e]));
            }
        }
    }
    candidates.into_iter().reduce(|best, c| {
        let better = c.2 > best.2 || (c.2 == best.2 && (c.0, c.1) < (best.0, best.1));
        if better {
            c
        } else {
            best
        }
    })
}

/// `m` models on one grid of `n` characters with a shared keep mask (at least
/// one kept position) and strictly positive kept values.
pub fn arb_bundle(m: std::ops::RangeInclusive<usize>, n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = AlignedBundle> {
    (m, n)
        .prop_flat_map(|(m, n)| {
            (
                prop::collection::vec(prop::collection::vec(0.001..1.0f64, 2 * n), m),
                prop::collection::vec(prop::bool::weighted(0.85), n),
                0..n,
            )
        })
        .prop_map(|(values, mut keep, anchor)| {
            keep[anchor] = true;
            let n = keep.len();
            let per_model = values
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let mask = |xs: &[f64]| -> Vec<f64> {
                        let total: f64 = xs.iter().zip(&keep).filter(|(_, &k)| k).map(|(x, _)| x).sum();
                        xs.iter().zip(&keep).map(|(x, &k)| if k { x / total } else { 0.0 }).collect()
                    };
                    (
                        format!("m{i}"),
                        CharDistributionPair {
                            start: mask(&v[..n]),
                            end: mask(&v[n..]),
                            keep_mask: keep.clone(),
                        },
                    )
                })
                .collect();
            AlignedBundle {
                question_id: "q".into(),
                context: "x".repeat(n),
                per_model,
            }
        })
}

/// Same bundle with the models listed in `order`.
pub fn permuted(bundle: &AlignedBundle, order: &[usize]) -> AlignedBundle {
    AlignedBundle {
        per_model: order.iter().map(|&i| bundle.per_model[i].clone()).collect(),
        ..bundle.clone()
    }
}

/// Sequence `0..n` shuffled by a proptest-provided permutation.
pub fn arb_permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

/// Index of the largest kept value, lowest index on ties.
pub fn argmax_kept(v: &[f64], keep: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for t in 0..v.len() {
        if keep[t] && best.is_none_or(|b| v[t] > v[b]) {
            best = Some(t);
        }
    }
    best
}

/// Random distributions on an `n`-position grid; raising the uniform draws to
/// `sharpness` makes them peaked like real model outputs.
pub fn random_bundle(rng: &mut ChaCha8Rng, m: usize, n: usize, masked: &[usize], sharpness: i32) -> AlignedBundle {
    let keep: Vec<bool> = (0..n).map(|t| !masked.contains(&t)).collect();
    let dist = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..n)
            .map(|t| if keep[t] { rng.random_range(0.01f64..1.0).powi(sharpness) } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    };
    AlignedBundle {
        question_id: "q".into(),
        context: "x".repeat(n),
        per_model: (0..m)
            .map(|i| {
                let start = dist(rng);
                let end = dist(rng);
                (
                    format!("m{i}"),
                    CharDistributionPair {
                        start,
                        end,
                        keep_mask: keep.clone(),
                    },
                )
            })
            .collect(),
    }
}

/// Small enough network for exhaustive finite differences.
pub fn toy_config() -> FeatureConfig {
    FeatureConfig {
        window_half_size: 1,
        include_entropy: true,
        trunk_widths: vec![6],
        branch_width: 4,
    }
}

/// Worst relative difference between the analytic gradient and central
/// differences, over every parameter of a toy network at a random point.
pub fn max_gradient_error(seed: u64) -> f64 {
    let fcfg = toy_config();
    let mut model = StackingModel::new(fcfg.clone(), 1, seed).unwrap();
    let n_params = model.params.n_params();
    assert!(model.feature_dim() <= 60 && n_params <= 200);

    // Move away from the zero-bias initialization to a generic point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point: Vec<f64> = (0..n_params).map(|_| rng.random_range(-0.8..0.8)).collect();
    model.params.set_from_slice(&point);

    let a = random_bundle(&mut rng, 1, 10, &[], 1);
    let b = random_bundle(&mut rng, 1, 10, &[2, 7], 1);
    let ex_a = prepare_example(&a, (3, 6), &fcfg).unwrap();
    let ex_b = prepare_example(&b, (0, 4), &fcfg).unwrap();
    let batch = [&ex_a, &ex_b];

    let analytic = loss_and_gradient(&model, &batch).1.to_vec();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..n_params {
        let mut shifted = point.clone();
        shifted[k] = point[k] + h;
        model.params.set_from_slice(&shifted);
        let lp = loss_and_gradient(&model, &batch).0;
        shifted[k] = point[k] - h;
        model.params.set_from_slice(&shifted);
        let lm = loss_and_gradient(&model, &batch).0;
        let numeric = (lp - lm) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs());
        let err = if scale > 1e-7 {
            (analytic[k] - numeric).abs() / scale
        } else {
            (analytic[k] - numeric).abs()
        };
        worst = worst.max(err);
    }
    worst
}

/// 32 random bundles with arbitrary gold spans; only memorization can fit them.
pub fn memorization_set() -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    (0..32)
        .map(|_| {
            let n = rng.random_range(12..=20);
            let b = random_bundle(&mut rng, 2, n, &[], 4);
            let s = rng.random_range(0..n);
            let e = rng.random_range(s..n.min(s + 5));
            (b, (s, e))
        })
        .collect()
}

pub fn memorization_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 32,
        max_epochs: 500,
        patience: 500,
        target_val_loss: 0.01,
        ..TrainConfig::default()
    }
}

/// Generate a pool and align it against its gold answers.
pub fn synth_bundles(spec: &SynthSpec) -> (Vec<AlignedBundle>, GoldSet) {
    let pool = generate_pool(spec).unwrap();
    let gold = GoldSet::new(pool.gold).unwrap();
    let records = PredictionPool::from_records(pool.predictions.into_iter().flatten()).unwrap();
    let bundles = records.bundles(Some(&gold), &AlignConfig::default()).unwrap();
    (bundles, gold)
}

/// Pool where model 1 (`teacher`) always answers correctly and the other
/// models always point at a distractor.
pub fn separable_pool(n_questions: usize, seed: u64) -> (Vec<AlignedBundle>, GoldSet) {
    let mut spec = SynthSpec::new(
        n_questions,
        seed,
        vec![
            SynthModel::new("noise1", 0.0, 0.7),
            SynthModel::new("teacher", 1.0, 0.7),
            SynthModel::new("noise2", 0.0, 0.7),
        ],
    );
    spec.context_words = (10, 20);
    synth_bundles(&spec)
}

/// Train on 300 separable-teacher questions and return the percentage of 200
/// held-out questions where the stacked span equals the teacher's.
pub fn teacher_agreement(seed: u64) -> f64 {
    let (bundles, gold) = separable_pool(500, seed);
    let (samples, skipped) = training_samples(&bundles, &gold);
    assert_eq!(skipped, 0);
    let (train_set, held_out) = samples.split_at(300);
    let out = train(train_set, &TrainConfig::default(), &FeatureConfig::default()).unwrap();
    let agree = held_out
        .iter()
        .filter(|(b, _)| {
            let teacher = extract_answer(&b.context, &b.per_model[1].1, 200).unwrap();
            let stacked = extract_answer(&b.context, &stack_combine(&out.model, b).unwrap(), 200).unwrap();
            (teacher.span.start, teacher.text_end) == (stacked.span.start, stacked.text_end)
        })
        .count();
    100.0 * agree as f64 / held_out.len() as f64
}

/// Exact-match report of every model alone.
pub fn base_reports(bundles: &[AlignedBundle], gold: &GoldSet) -> Vec<ScoreReport> {
    let m = bundles[0].n_models();
    (0..m)
        .map(|i| {
            let preds = predict_answers(bundles, 200, |b| Ok(b.per_model[i].1.clone())).unwrap();
            evaluate(&preds, gold).unwrap()
        })
        .collect()
}

pub fn ensemble_report(bundles: &[AlignedBundle], gold: &GoldSet, kind: CombineKind) -> ScoreReport {
    let preds = predict_answers(bundles, 200, |b| equal_weight_combine(b, kind)).unwrap();
    evaluate(&preds, gold).unwrap()
}
