//! Sentiment scoring for financial headlines: text normalization, lexicon
//! loading, rule-based valence, a small CNN ensemble trained on a cosine
//! objective, and the evaluation around it.

pub mod dataset;
pub mod eval;
pub mod lexicon;
pub mod model;
pub mod persist;
pub mod tensor;
pub mod text;
pub mod trainer;
pub mod vader;

pub use eval::{official_metric, Ablation, AblationTable, EvaluationReport};
pub use lexicon::{AffectiveLexicon, EmbeddingTable, LexiconStore, ValenceLexicon};
pub use model::{Model, ModelConfig};
pub use text::{preprocess, RawInstance, TokenSequence};
pub use trainer::{cross_validate, train_ensemble, train_one, Resources, TrainConfig};
pub use vader::{RuleConfig, ValenceScorer};
