//! Synthetic prediction pools with controlled accuracy, confidence and error
//! correlation.
//!
//! Contexts are sequences of distinct random lowercase words. For every
//! question a gold span of whole words is planted; each model independently
//! (or, inside a correlation group, jointly) decides whether it is right. A
//! right model puts `peak_mass` on the gold boundary tokens, a wrong one puts
//! it on a distractor span disjoint from the gold; the remaining mass is
//! spread uniformly over all tokens.
//!
//! Question `i` draws from its own generator seeded with
//! `splitmix64(seed ^ splitmix64(i))`, so output does not depend on the order
//! in which questions are generated.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{write_gold_file, write_prediction_file, GoldAnswer, PredictionRecord, TokenSpan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthModel {
    pub model_id: String,
    /// Probability in `[0, 1]` that the model's peak sits on the gold span.
    pub accuracy: f64,
    /// Mass in `[0, 1]` placed on the chosen boundary tokens.
    pub peak_mass: f64,
    /// Models sharing a group draw correlated outcomes.
    #[serde(default)]
    pub group: Option<String>,
    /// Split words of four or more characters into two tokens.
    #[serde(default)]
    pub split_tokens: bool,
}

impl SynthModel {
    pub fn new(model_id: impl Into<String>, accuracy: f64, peak_mass: f64) -> Self {
        Self {
            model_id: model_id.into(),
            accuracy,
            peak_mass,
            group: None,
            split_tokens: false,
        }
    }

    pub fn in_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_questions: usize,
    /// Inclusive word-count range of a context.
    #[serde(default = "default_context_words")]
    pub context_words: (usize, usize),
    /// Inclusive word-count range of gold and distractor answers.
    #[serde(default = "default_answer_words")]
    pub answer_words: (usize, usize),
    /// Probability that a grouped model reuses its group's shared draw.
    #[serde(default = "default_correlation")]
    pub group_correlation: f64,
    #[serde(default)]
    pub seed: u64,
    /// Question ids are this prefix followed by a zero-padded index.
    #[serde(default = "default_prefix")]
    pub question_prefix: String,
    pub models: Vec<SynthModel>,
}

fn default_context_words() -> (usize, usize) {
    (30, 60)
}

fn default_answer_words() -> (usize, usize) {
    (1, 3)
}

fn default_correlation() -> f64 {
    1.0
}

fn default_prefix() -> String {
    "q".into()
}

impl SynthSpec {
    pub fn new(n_questions: usize, seed: u64, models: Vec<SynthModel>) -> Self {
        Self {
            n_questions,
            context_words: default_context_words(),
            answer_words: default_answer_words(),
            group_correlation: default_correlation(),
            seed,
            question_prefix: default_prefix(),
            models,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| Error::usage(format!("synth spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_questions == 0 {
            return Err(Error::usage("n_questions must be at least 1"));
        }
        if self.models.is_empty() {
            return Err(Error::usage("synth spec lists no models"));
        }
        let (cmin, cmax) = self.context_words;
        let (amin, amax) = self.answer_words;
        if cmin == 0 || cmin > cmax || amin == 0 || amin > amax {
            return Err(Error::usage("word-count ranges must be non-empty and start at 1 or more"));
        }
        if 2 * amax > cmin {
            return Err(Error::usage(format!(
                "infeasible spec: answers of up to {amax} words plus a disjoint distractor do not fit a {cmin}-word context"
            )));
        }
        if !unit(self.group_correlation) {
            return Err(Error::usage("group_correlation must lie in [0, 1]"));
        }
        let mut ids = HashSet::new();
        for m in &self.models {
            if !unit(m.accuracy) || !unit(m.peak_mass) {
                return Err(Error::usage(format!(
                    "model {}: accuracy and peak_mass must lie in [0, 1]",
                    m.model_id
                )));
            }
            if !ids.insert(m.model_id.as_str()) {
                return Err(Error::usage(format!("duplicate model id {}", m.model_id)));
            }
        }
        Ok(())
    }
}

/// Generated prediction records (one list per model) and gold answers, all in
/// question order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPool {
    pub model_ids: Vec<String>,
    pub predictions: Vec<Vec<PredictionRecord>>,
    pub gold: Vec<GoldAnswer>,
}

impl SynthPool {
    /// Write `<model_id>.jsonl` per model and `gold.jsonl`; returns the
    /// prediction file paths in model order.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (id, records) in self.model_ids.iter().zip(&self.predictions) {
            let path = dir.join(format!("{id}.jsonl"));
            write_prediction_file(&path, records)?;
            paths.push(path);
        }
        write_gold_file(dir.join("gold.jsonl"), &self.gold)?;
        Ok(paths)
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of an independent stream `index` derived from `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index))
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn random_word(rng: &mut ChaCha8Rng) -> String {
    loop {
        let len = rng.random_range(3..=8);
        let w: String = (0..len).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect();
        if !ARTICLES.contains(&w.as_str()) {
            return w;
        }
    }
}

/// Word-level span, inclusive.
type WordSpan = (usize, usize);

fn pick_distractor(rng: &mut ChaCha8Rng, n_words: usize, gold: WordSpan, (amin, amax): (usize, usize)) -> WordSpan {
    loop {
        let len = rng.random_range(amin..=amax);
        let start = rng.random_range(0..=n_words - len);
        let end = start + len - 1;
        if end < gold.0 || start > gold.1 {
            return (start, end);
        }
    }
}

struct Question {
    context: String,
    /// Character span `[start, end)` of every word.
    words: Vec<(usize, usize)>,
    gold: WordSpan,
    answer: String,
}

fn make_question(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Question {
    loop {
        let n_words = rng.random_range(spec.context_words.0..=spec.context_words.1);
        let mut seen = HashSet::new();
        let mut words_text = Vec::with_capacity(n_words);
        while words_text.len() < n_words {
            let w = random_word(rng);
            if seen.insert(w.clone()) {
                words_text.push(w);
            }
        }
        let mut words = Vec::with_capacity(n_words);
        let mut pos = 0;
        for w in &words_text {
            let len = w.chars().count();
            words.push((pos, pos + len));
            pos += len + 1;
        }
        let context = words_text.join(" ");
        let len = rng.random_range(spec.answer_words.0..=spec.answer_words.1);
        let start = rng.random_range(0..=n_words - len);
        let gold = (start, start + len - 1);
        let answer = words_text[gold.0..=gold.1].join(" ");
        // The answer must be locatable unambiguously by string search.
        if context.matches(answer.as_str()).count() == 1 {
            return Question {
                context,
                words,
                gold,
                answer,
            };
        }
    }
}

fn tokens_for(words: &[(usize, usize)], split: bool) -> Vec<TokenSpan> {
    let mut out = Vec::with_capacity(words.len() * 2);
    for &(s, e) in words {
        if split && e - s >= 4 {
            out.push(TokenSpan::new(s, s + 2));
            out.push(TokenSpan::new(s + 2, e));
        } else {
            out.push(TokenSpan::new(s, e));
        }
    }
    out
}

fn token_containing(tokens: &[TokenSpan], c: usize) -> usize {
    tokens
        .iter()
        .position(|t| t.char_start <= c && c < t.char_end)
        .expect("every word character is tokenized")
}

fn peaked(n: usize, at: usize, peak: f64) -> Vec<f64> {
    let residual = (1.0 - peak) / n as f64;
    let mut v = vec![residual; n];
    v[at] += peak;
    v
}

fn generate_question(spec: &SynthSpec, index: usize) -> (GoldAnswer, Vec<PredictionRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let q = make_question(&mut rng, spec);
    let question_id = format!("{}{index:06}", spec.question_prefix);
    let n_words = q.words.len();

    let groups: BTreeMap<&str, (f64, WordSpan)> = spec
        .models
        .iter()
        .filter_map(|m| m.group.as_deref())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|g| {
            let u = rng.random::<f64>();
            (g, (u, pick_distractor(&mut rng, n_words, q.gold, spec.answer_words)))
        })
        .collect();

    let records = spec
        .models
        .iter()
        .map(|m| {
            let coin = rng.random::<f64>();
            let own_u = rng.random::<f64>();
            let own_d = pick_distractor(&mut rng, n_words, q.gold, spec.answer_words);
            let (u, distractor) = match m.group.as_deref() {
                Some(g) if coin < spec.group_correlation => groups[g],
                _ => (own_u, own_d),
            };
            let target = if u < m.accuracy { q.gold } else { distractor };
            let tokens = tokens_for(&q.words, m.split_tokens);
            let s_tok = token_containing(&tokens, q.words[target.0].0);
            let e_tok = token_containing(&tokens, q.words[target.1].1 - 1);
            PredictionRecord {
                model_id: m.model_id.clone(),
                question_id: question_id.clone(),
                context: q.context.clone(),
                start_probs: peaked(tokens.len(), s_tok, m.peak_mass),
                end_probs: peaked(tokens.len(), e_tok, m.peak_mass),
                tokens,
            }
        })
        .collect();
    let gold = GoldAnswer {
        question_id,
        context: q.context,
        answers: vec![q.answer],
    };
    (gold, records)
}

pub fn generate_pool(spec: &SynthSpec) -> Result<SynthPool> {
    spec.validate()?;
    let per_question: Vec<(GoldAnswer, Vec<PredictionRecord>)> = (0..spec.n_questions)
        .into_par_iter()
        .map(|i| generate_question(spec, i))
        .collect();
    let mut predictions = vec![Vec::with_capacity(spec.n_questions); spec.models.len()];
    let mut gold = Vec::with_capacity(spec.n_questions);
    for (g, records) in per_question {
        gold.push(g);
        for (list, r) in predictions.iter_mut().zip(records) {
            list.push(r);
        }
    }
    Ok(SynthPool {
        model_ids: spec.models.iter().map(|m| m.model_id.clone()).collect(),
        predictions,
        gold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_valid_and_answers_locatable() {
        let mut split = SynthModel::new("b", 0.5, 0.6);
        split.split_tokens = true;
        let spec = SynthSpec::new(50, 11, vec![SynthModel::new("a", 0.5, 0.7), split]);
        let pool = generate_pool(&spec).unwrap();
        for list in &pool.predictions {
            for r in list {
                r.validate().unwrap();
            }
        }
        for g in &pool.gold {
            g.validate().unwrap();
            assert!(g.char_span().is_some());
        }
    }

    #[test]
    fn same_seed_same_pool() {
        let spec = SynthSpec::new(20, 5, vec![SynthModel::new("a", 0.4, 0.7)]);
        assert_eq!(generate_pool(&spec).unwrap(), generate_pool(&spec).unwrap());
        let other = SynthSpec { seed: 6, ..spec.clone() };
        assert_ne!(generate_pool(&spec).unwrap().gold, generate_pool(&other).unwrap().gold);
    }

    #[test]
    fn infeasible_answer_length_is_rejected() {
        let mut spec = SynthSpec::new(5, 0, vec![SynthModel::new("a", 0.4, 0.7)]);
        spec.context_words = (3, 5);
        spec.answer_words = (4, 6);
        assert!(matches!(generate_pool(&spec), Err(Error::Usage(_))));
    }

    #[test]
    fn toml_spec_parses() {
        let text = r#"
            n_questions = 10
            seed = 3
            context_words = [20, 30]
            [[models]]
            model_id = "x"
            accuracy = 0.5
            peak_mass = 0.7
            group = "g"
        "#;
        let spec = SynthSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.context_words, (20, 30));
        assert_eq!(spec.models[0].group.as_deref(), Some("g"));
        assert!(SynthSpec::from_toml_str("n_questions = 0\nmodels = []").is_err());
    }
}
