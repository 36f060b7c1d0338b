//! Ensembling of extractive question-answering models at the level of their
//! start/end probability distributions.
//!
//! Base-model outputs are read as token-level prediction dumps
//! ([`interchange`]), projected onto a shared character grid, combined
//! ([`weighting`], [`stacking`]), decoded into answer spans and scored
//! ([`scoring`]), and analysed ([`diagnostics`]). [`synth`] produces
//! synthetic pools with controllable accuracy and error correlation.

pub mod diagnostics;
pub mod error;
pub mod interchange;
pub mod pool;
pub mod scoring;
pub mod stacking;
pub mod synth;
pub mod weighting;

pub use error::{Error, Result};
pub use interchange::{
    AlignConfig, AlignedBundle, CharDistributionPair, GoldAnswer, GoldSet, PredictionRecord, TokenSpan,
};
pub use pool::PredictionPool;
pub use scoring::{CharSpan, ScoreReport, SummaryRow};
pub use stacking::{FeatureConfig, StackingModel, TrainConfig};
pub use synth::{SynthModel, SynthSpec};
pub use weighting::{CombineKind, WeightConfig, WeightMode};
