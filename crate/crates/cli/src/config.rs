//! Experiment configuration: an optional TOML file overlaid by flags.
//!
//! Relative paths in a config file are resolved against the file's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use spanfuse_core::scoring::DEFAULT_MAX_SPAN_CHARS;
use spanfuse_core::{Error, FeatureConfig, TrainConfig, WeightMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AccMetric {
    #[default]
    Em,
    F1,
}

/// One ensemble method to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Weight(WeightMode),
    /// Stacking network loaded from a checkpoint.
    Stack(PathBuf),
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("stack:") {
            if path.is_empty() {
                return Err(Error::Usage(format!("invalid method spec '{s}': missing checkpoint path")));
            }
            return Ok(Method::Stack(PathBuf::from(path)));
        }
        s.parse::<WeightMode>()
            .map(Method::Weight)
            .map_err(|e| Error::Usage(format!("invalid method spec '{s}': {e}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Weight(m) => write!(f, "{m}"),
            Method::Stack(p) => write!(f, "stack:{}", p.display()),
        }
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>, Error> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Flags shared by the experiment subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; flags given on the command line take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prediction file (repeatable)
    #[arg(long = "pred")]
    pub predictions: Vec<PathBuf>,
    /// Gold answer file
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Comma-separated methods: mean, multiply, max, min, geomean,
    /// unequal-fixed[:ALPHA], unequal-auto, stack:CHECKPOINT
    #[arg(long)]
    pub method: Option<String>,
    /// Replace each model's distributions by one-hot argmax vectors
    #[arg(long)]
    pub non_prob: bool,
    /// Longest answer span, in characters
    #[arg(long)]
    pub max_span_chars: Option<usize>,
    /// Root seed for all randomness
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Weight-estimation prediction file (repeatable)
    #[arg(long = "est-pred")]
    pub est_predictions: Vec<PathBuf>,
    /// Weight-estimation gold file; each one is a separate source (repeatable)
    #[arg(long = "est-gold")]
    pub est_gold: Vec<PathBuf>,
    /// Score used as model accuracy for unequal weighting
    #[arg(long, value_enum)]
    pub acc_metric: Option<AccMetric>,
    /// Also write per-question scores
    #[arg(long)]
    pub per_sample: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    predictions: Vec<PathBuf>,
    gold: Option<PathBuf>,
    methods: Vec<String>,
    non_prob: bool,
    max_span_chars: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    est_predictions: Vec<PathBuf>,
    est_gold: Vec<PathBuf>,
    acc_metric: Option<AccMetric>,
    per_sample: bool,
    sizes: Vec<usize>,
    train: Option<TrainConfig>,
    features: Option<FeatureConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub predictions: Vec<PathBuf>,
    pub gold: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub non_prob: bool,
    pub max_span_chars: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub est_predictions: Vec<PathBuf>,
    pub est_gold: Vec<PathBuf>,
    pub acc_metric: AccMetric,
    pub per_sample: bool,
    pub sizes: Vec<usize>,
    pub train: TrainConfig,
    pub features: FeatureConfig,
}

fn rebase(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p
    }
}

impl ExperimentConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                let file: ConfigFile = toml::from_str(&text)
                    .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
                ConfigFile {
                    predictions: file.predictions.into_iter().map(|p| rebase(&base, p)).collect(),
                    gold: file.gold.map(|p| rebase(&base, p)),
                    out_dir: file.out_dir.map(|p| rebase(&base, p)),
                    est_predictions: file.est_predictions.into_iter().map(|p| rebase(&base, p)).collect(),
                    est_gold: file.est_gold.into_iter().map(|p| rebase(&base, p)).collect(),
                    ..file
                }
            }
            None => ConfigFile::default(),
        };

        let pick = |flag: &[PathBuf], file: Vec<PathBuf>| if flag.is_empty() { file } else { flag.to_vec() };
        let methods = match &args.method {
            Some(list) => parse_methods(list)?,
            None => file
                .methods
                .iter()
                .map(|s| s.parse())
                .collect::<Result<Vec<_>, Error>>()?,
        };
        let out_dir = args
            .out_dir
            .clone()
            .or(file.out_dir)
            .ok_or_else(|| Error::Usage("--out-dir is required".into()))?;
        let max_span_chars = args.max_span_chars.or(file.max_span_chars).unwrap_or(DEFAULT_MAX_SPAN_CHARS);
        if max_span_chars == 0 {
            bail!(Error::Usage("--max-span-chars must be at least 1".into()));
        }
        let seed = args.seed.or(file.seed).unwrap_or(0);
        let mut train = file.train.unwrap_or_default();
        train.seed = seed;
        train.max_span_chars = max_span_chars;
        let cfg = Self {
            predictions: pick(&args.predictions, file.predictions),
            gold: args.gold.clone().or(file.gold),
            methods,
            non_prob: args.non_prob || file.non_prob,
            max_span_chars,
            seed,
            out_dir,
            est_predictions: pick(&args.est_predictions, file.est_predictions),
            est_gold: pick(&args.est_gold, file.est_gold),
            acc_metric: args.acc_metric.or(file.acc_metric).unwrap_or_default(),
            per_sample: args.per_sample || file.per_sample,
            sizes: file.sizes,
            train,
            features: file.features.unwrap_or_default(),
        };
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn require_predictions(&self) -> Result<()> {
        if self.predictions.is_empty() {
            bail!(Error::Usage("at least one --pred file is required".into()));
        }
        Ok(())
    }

    pub fn require_gold(&self) -> Result<&Path> {
        self.gold
            .as_deref()
            .ok_or_else(|| Error::Usage("--gold is required".into()).into())
    }

    pub fn has_estimation_set(&self) -> bool {
        !self.est_predictions.is_empty() && !self.est_gold.is_empty()
    }

    /// Inputs must not be the output directory or live inside it, so that
    /// writing reports can never clobber them.
    fn check_paths(&self) -> Result<()> {
        let out = absolute(&self.out_dir);
        let inputs = self
            .predictions
            .iter()
            .chain(&self.gold)
            .chain(&self.est_predictions)
            .chain(&self.est_gold);
        for p in inputs {
            if absolute(p).starts_with(&out) {
                bail!(Error::Usage(format!(
                    "input {} lies inside the output directory {}",
                    p.display(),
                    self.out_dir.display()
                )));
            }
        }
        Ok(())
    }
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p)
        .or_else(|_| std::path::absolute(p))
        .unwrap_or_else(|_| p.to_path_buf())
}

/// Create the output directory, reporting failures as I/O errors.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
        .with_context(|| "cannot create output directory")
}
