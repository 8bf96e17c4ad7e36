//! The cosine metric, evaluation reports and the ablation study.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::text::RawInstance;
use crate::trainer::{cross_validate, train_ensemble, Resources, TrainConfig, TrainError};

/// Predictions with an L2 norm below this count as all-zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("{0} predictions for {1} gold scores")]
    Length(usize, usize),
    #[error("no instances to score")]
    Empty,
    #[error("every gold score is zero; the cosine is undefined")]
    ZeroGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    /// The prediction vector was all zero and scored 0 by convention.
    pub zero_prediction: bool,
}

/// Cosine similarity between the full prediction and gold vectors.
pub fn official_metric(predicted: &[f64], gold: &[f64]) -> Result<MetricValue, MetricError> {
    if predicted.len() != gold.len() {
        return Err(MetricError::Length(predicted.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(MetricError::Empty);
    }
    let gn = gold.iter().map(|g| g * g).sum::<f64>().sqrt();
    if gn == 0.0 {
        return Err(MetricError::ZeroGold);
    }
    let pn = predicted.iter().map(|p| p * p).sum::<f64>().sqrt();
    if pn < ZERO_NORM {
        return Ok(MetricValue {
            value: 0.0,
            zero_prediction: true,
        });
    }
    let dot: f64 = predicted.iter().zip(gold).map(|(p, g)| p * g).sum();
    Ok(MetricValue {
        value: (dot / (pn * gn)).clamp(-1.0, 1.0),
        zero_prediction: false,
    })
}

/// The three model variants compared by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    Full,
    NoEmbeddings,
    NoPreprocessing,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoEmbeddings, Ablation::NoPreprocessing];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoEmbeddings => "no-embeddings",
            Ablation::NoPreprocessing => "no-preprocessing",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoEmbeddings => c.use_embeddings = false,
            Ablation::NoPreprocessing => c.preprocess = false,
        }
        c
    }

    /// Published held-out scores, shown next to the observed ones.
    pub fn reference_test(self) -> f64 {
        match self {
            Ablation::Full => 0.745,
            Ablation::NoEmbeddings => 0.660,
            Ablation::NoPreprocessing => 0.678,
        }
    }

    /// Published cross-validation mean and standard deviation.
    pub fn reference_cv(self) -> (f64, f64) {
        match self {
            Ablation::Full => (0.701, 0.023),
            Ablation::NoEmbeddings => (0.586, 0.017),
            Ablation::NoPreprocessing => (0.648, 0.022),
        }
    }
}

/// One configuration's held-out score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub configuration: String,
    pub metric: f64,
    pub zero_prediction: bool,
    pub n_instances: usize,
    pub predictions: Vec<f64>,
    pub gold: Vec<f64>,
}

impl EvaluationReport {
    pub fn new(configuration: &str, predictions: Vec<f64>, gold: Vec<f64>) -> Result<Self, MetricError> {
        let m = official_metric(&predictions, &gold)?;
        Ok(Self {
            configuration: configuration.to_string(),
            metric: m.value,
            zero_prediction: m.zero_prediction,
            n_instances: gold.len(),
            predictions,
            gold,
        })
    }
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub configuration: Ablation,
    pub mean: f64,
    /// Sample standard deviation across folds; absent in held-out mode.
    pub std: Option<f64>,
    pub fold_scores: Vec<f64>,
    pub reference_mean: f64,
    pub reference_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn gold_of(instances: &[RawInstance]) -> Result<Vec<f64>, TrainError> {
    instances
        .iter()
        .enumerate()
        .map(|(i, r)| r.score.ok_or_else(|| TrainError::Data(format!("test instance {i} has no score"))))
        .collect()
}

impl AblationTable {
    /// Trains each variant on `train` and scores it on `test`.
    pub fn held_out(
        train: &[RawInstance],
        test: &[RawInstance],
        resources: &Resources,
        model_config: &ModelConfig,
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let gold = gold_of(test)?;
        let mut rows = Vec::with_capacity(3);
        for a in Ablation::ALL {
            let (_, ens) = train_ensemble(train, test, resources, &a.apply(model_config), config)?;
            let m = official_metric(&ens.mean, &gold).map_err(|e| TrainError::Data(e.to_string()))?;
            rows.push(AblationRow {
                configuration: a,
                mean: m.value,
                std: None,
                fold_scores: vec![],
                reference_mean: a.reference_test(),
                reference_std: None,
            });
        }
        Ok(Self { rows })
    }

    /// Cross-validates each variant on the same folds.
    pub fn cross_validated(
        dataset: &[RawInstance],
        resources: &Resources,
        model_config: &ModelConfig,
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let mut rows = Vec::with_capacity(3);
        for a in Ablation::ALL {
            let cv = cross_validate(dataset, resources, &a.apply(model_config), config)?;
            let (rm, rs) = a.reference_cv();
            rows.push(AblationRow {
                configuration: a,
                mean: cv.mean,
                std: Some(cv.std),
                fold_scores: cv.scores(),
                reference_mean: rm,
                reference_std: Some(rs),
            });
        }
        Ok(Self { rows })
    }

    fn score(&self, a: Ablation) -> Option<f64> {
        self.rows.iter().find(|r| r.configuration == a).map(|r| r.mean)
    }

    /// Whether full > no-preprocessing > no-embeddings holds.
    pub fn ordering_holds(&self) -> bool {
        match (
            self.score(Ablation::Full),
            self.score(Ablation::NoPreprocessing),
            self.score(Ablation::NoEmbeddings),
        ) {
            (Some(f), Some(p), Some(e)) => f > p && p > e,
            _ => false,
        }
    }

    /// Fixed-width text table followed by an ordering line.
    pub fn render(&self) -> String {
        let fmt = |m: f64, s: Option<f64>| match s {
            Some(s) => format!("{m:.3} ± {s:.3}"),
            None => format!("{m:.3}"),
        };
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>15} {:>15}", "configuration", "observed", "reference");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<18} {:>15} {:>15}",
                r.configuration.name(),
                fmt(r.mean, r.std),
                fmt(r.reference_mean, r.reference_std)
            );
        }
        let _ = writeln!(
            out,
            "ordering full > no-preprocessing > no-embeddings: {}",
            if self.ordering_holds() { "holds" } else { "does not hold" }
        );
        out
    }

    /// One JSON object per row.
    pub fn json_lines(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable row") + "\n")
            .collect()
    }
}
