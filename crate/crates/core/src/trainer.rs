//! Mini-batch training on the batch-level cosine distance, Adam updates,
//! seeded ensembles and k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::official_metric;
use crate::lexicon::{LexiconStore, PAD_INDEX};
use crate::model::{Model, ModelConfig, ModelError, ModelParameters, Vocabulary};
use crate::tensor::{self, Tape, Tensor, TensorError};
use crate::text::{preprocess, RawInstance, TokenSequence};
use crate::vader::ValenceScorer;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Numerical {
        epoch: usize,
        batch: usize,
        #[source]
        source: ModelError,
    },
    #[error("ensemble member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<TrainError>,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("prediction length {0} differs from target length {1}")]
    Length(usize, usize),
    #[error("empty batch")]
    Empty,
    #[error("all targets in the batch are zero")]
    ZeroTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_models: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub base_seed: u64,
    pub folds: usize,
    /// Hold out part of the training data and keep the best epoch.
    pub early_stopping: bool,
    pub holdout_fraction: f64,
    pub patience: usize,
    /// Train ensemble members on separate threads.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_models: 10,
            batch_size: 32,
            epochs: 20,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            base_seed: 42,
            folds: 5,
            early_stopping: false,
            holdout_fraction: 0.1,
            patience: 5,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_models < 1 {
            return Err(TrainError::Config("n_models must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config(
                "batch_size must be >= 2: the cosine of a single score carries only its sign".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(TrainError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(TrainError::Config("adam_epsilon must be > 0".into()));
        }
        if self.early_stopping && !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(TrainError::Config("holdout_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// `1 − cos(predicted, target)` with a flag for the near-zero prediction
/// case, where the distance is 1 by convention.
pub fn cosine_loss(predicted: &[f64], target: &[f64]) -> Result<(f64, bool), LossError> {
    if predicted.len() != target.len() {
        return Err(LossError::Length(predicted.len(), target.len()));
    }
    if predicted.is_empty() {
        return Err(LossError::Empty);
    }
    if target.iter().all(|&t| t == 0.0) {
        return Err(LossError::ZeroTarget);
    }
    Ok(tensor::cosine_distance(predicted, target))
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[&Tensor]) -> Self {
        Self {
            step: 0,
            first: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            second: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            epsilon: c.adam_epsilon,
        }
    }
}

/// Which entries of a parameter tensor never move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frozen {
    None,
    All,
    /// The leading `n` values (the `<pad>` row of the embedding table).
    Prefix(usize),
}

/// One bias-corrected Adam update over every tensor.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    frozen: &[Frozen],
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let skip = match frozen.get(i).copied().unwrap_or(Frozen::None) {
            Frozen::All => continue,
            Frozen::None => 0,
            Frozen::Prefix(n) => n,
        };
        let g = grads[i].data();
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (j, w) in p.data_mut().iter_mut().enumerate().skip(skip) {
            let gj = g[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Lexica and the valence scorer shared by every model of a run.
#[derive(Debug, Clone)]
pub struct Resources {
    pub store: Option<LexiconStore>,
    pub scorer: ValenceScorer,
}

/// A trained network and its per-epoch summed batch loss.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub seed: u64,
    pub loss_trace: Vec<f64>,
    /// Batches whose predictions were all near zero (loss 1, no gradient).
    pub degenerate_batches: usize,
    /// Epoch whose parameters were kept when early stopping is on.
    pub best_epoch: Option<usize>,
}

/// One line of a loss trace or fold score, for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub fold: Option<usize>,
    pub model: usize,
    pub epoch: usize,
    pub value: f64,
}

fn check_labeled(dataset: &[RawInstance]) -> Result<Vec<f64>, TrainError> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, inst)| match inst.score {
            Some(s) if s.is_finite() && (-1.0..=1.0).contains(&s) => Ok(s),
            Some(s) => Err(TrainError::Data(format!("instance {i}: score {s} outside [-1, 1]"))),
            None => Err(TrainError::Data(format!("instance {i} has no score"))),
        })
        .collect()
}

/// Splits a visiting order into batches of `batch_size`. A short final batch
/// joins its predecessor, and batches whose targets are all zero join a
/// neighbor, since their cosine is undefined.
pub fn make_batches(order: &[usize], batch_size: usize, targets: &[f64]) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < batch_size) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(batches.len());
    let mut carry: Vec<usize> = Vec::new();
    for mut b in batches {
        if !carry.is_empty() {
            carry.append(&mut b);
            b = std::mem::take(&mut carry);
        }
        if b.iter().all(|&i| targets[i] == 0.0) {
            match out.last_mut() {
                Some(prev) => prev.extend(b),
                None => carry = b,
            }
        } else {
            out.push(b);
        }
    }
    if !carry.is_empty() {
        // every batch was all-zero; the caller rejects such data up front
        out.push(carry);
    }
    out
}

struct Prepared {
    seqs: Vec<TokenSequence>,
}

fn prepare(dataset: &[RawInstance], config: &ModelConfig) -> Prepared {
    Prepared {
        seqs: dataset.iter().map(|i| preprocess(i, config.preprocess)).collect(),
    }
}

fn frozen_mask(model: &Model) -> Vec<Frozen> {
    let n = model.params.tensors().len();
    let mut frozen = vec![Frozen::None; n];
    frozen[0] = if model.config.fine_tune_embeddings {
        Frozen::Prefix((PAD_INDEX + 1) * model.params.row_dim())
    } else {
        Frozen::All
    };
    frozen
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains one network. Initialization, shuffling and dropout all derive from
/// `seed`, so equal inputs give bit-identical parameters.
pub fn train_one(
    dataset: &[RawInstance],
    resources: &Resources,
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    model_config.validate()?;
    if dataset.len() < 2 {
        return Err(TrainError::Data(format!(
            "need at least 2 training instances, got {}",
            dataset.len()
        )));
    }
    let targets = check_labeled(dataset)?;
    if targets.iter().all(|&t| t == 0.0) {
        return Err(TrainError::Data("all training targets are zero".into()));
    }

    let prepared = prepare(dataset, model_config);
    let vocab = Vocabulary::build(prepared.seqs.iter().flat_map(|s| s.iter()));
    let mut model = Model::init(model_config, resources.store.as_ref(), vocab, seed)?;
    let reprs: Vec<_> = prepared
        .seqs
        .iter()
        .map(|s| model.represent(s, &resources.scorer))
        .collect();

    let mut shuffle_rng = derived_rng(seed, 1);
    let mut dropout_rng = derived_rng(seed, 2);

    let mut train_idx: Vec<usize> = (0..dataset.len()).collect();
    let mut holdout_idx = Vec::new();
    if config.early_stopping {
        let mut split_rng = derived_rng(seed, 3);
        train_idx.shuffle(&mut split_rng);
        let n_hold = ((dataset.len() as f64 * config.holdout_fraction).round() as usize)
            .clamp(1, dataset.len().saturating_sub(2));
        holdout_idx = train_idx.split_off(dataset.len() - n_hold);
        train_idx.sort_unstable();
    }

    let adam_cfg = AdamConfig::from(config);
    let mut state = AdamState::new(&model.params.tensors());
    let frozen = frozen_mask(&model);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut degenerate = 0;
    let mut best: Option<(f64, usize, ModelParameters)> = None;

    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut shuffle_rng);
        let batches = make_batches(&order, config.batch_size, &targets);
        let mut epoch_loss = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let mut outs = Vec::with_capacity(batch.len());
            for &i in batch {
                let out = model
                    .forward_on_tape(&mut tape, &vars, &reprs[i], true, &mut dropout_rng)
                    .map_err(|source| TrainError::Numerical { epoch, batch: b, source })?;
                outs.push(out);
            }
            let batch_targets: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let numerical = |e: TensorError| TrainError::Numerical {
                epoch,
                batch: b,
                source: ModelError::Layer {
                    layer: "loss".into(),
                    source: e,
                },
            };
            let preds = tape.concat(&outs).map_err(numerical)?;
            let loss = tape.cosine_distance(preds, &batch_targets).map_err(|e| match e {
                TensorError::NonFinite { .. } => TrainError::NonFiniteLoss { epoch, batch: b },
                e => numerical(e),
            })?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += value;
            if tape.is_degenerate(loss) {
                degenerate += 1;
                continue;
            }
            let mut grads = tape.backward(loss).map_err(numerical)?;
            let grads: Vec<Tensor> = vars.ordered().into_iter().map(|v| grads.take(v)).collect();
            let mut params = model.params.tensors_mut();
            adam_step(&mut params, &grads, &frozen, &mut state, &adam_cfg);
        }
        trace.push(epoch_loss);

        if config.early_stopping {
            let preds: Vec<f64> = holdout_idx
                .iter()
                .map(|&i| model.forward(&reprs[i], false, &mut dropout_rng))
                .collect::<Result<_, _>>()?;
            let gold: Vec<f64> = holdout_idx.iter().map(|&i| targets[i]).collect();
            let score = official_metric(&preds, &gold).map(|m| m.value).unwrap_or(f64::NEG_INFINITY);
            let improved = best.as_ref().map_or(true, |(s, _, _)| score > *s);
            if improved {
                best = Some((score, epoch, model.params.clone()));
            } else if best.as_ref().is_some_and(|(_, e, _)| epoch - e >= config.patience) {
                break;
            }
        }
    }

    let mut best_epoch = None;
    if let Some((_, epoch, params)) = best {
        model.params = params;
        best_epoch = Some(epoch);
    }
    Ok(TrainedModel {
        model,
        seed,
        loss_trace: trace,
        degenerate_batches: degenerate,
        best_epoch,
    })
}

/// Inference-mode predictions. Tokens unseen in training but known to the
/// lexica get their lexicon rows.
pub fn predict(
    model: &Model,
    instances: &[RawInstance],
    resources: &Resources,
) -> Result<Vec<f64>, ModelError> {
    let seqs: Vec<TokenSequence> = instances
        .iter()
        .map(|i| preprocess(i, model.config.preprocess))
        .collect();
    let mut extended = model.clone();
    extended.extend_vocabulary(seqs.iter().flat_map(|s| s.iter()), resources.store.as_ref());
    seqs.iter()
        .map(|s| extended.predict_tokens(s, &resources.scorer))
        .collect()
}

/// Per-model predictions and their column means.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub per_model: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl EnsemblePrediction {
    /// Averages per column. Values are summed in sorted order, which makes
    /// the mean independent of model order down to the last bit.
    pub fn from_members(per_model: Vec<Vec<f64>>) -> Self {
        let n = per_model.len();
        let width = per_model.first().map_or(0, Vec::len);
        assert!(per_model.iter().all(|r| r.len() == width), "ragged ensemble");
        let mean = (0..width)
            .map(|u| {
                let mut col: Vec<f64> = per_model.iter().map(|r| r[u]).collect();
                col.sort_by(f64::total_cmp);
                col.iter().sum::<f64>() / n as f64
            })
            .collect();
        Self { per_model, mean }
    }
}

/// Trains `n_models` networks with seeds `base_seed + n` and averages their
/// predictions on `test_set`.
pub fn train_ensemble(
    dataset: &[RawInstance],
    test_set: &[RawInstance],
    resources: &Resources,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Vec<TrainedModel>, EnsemblePrediction), TrainError> {
    config.validate()?;
    let run = |n: usize| -> Result<(TrainedModel, Vec<f64>), TrainError> {
        let wrap = |e: TrainError| TrainError::Member {
            index: n,
            source: Box::new(e),
        };
        let seed = config.base_seed.wrapping_add(n as u64);
        let trained = train_one(dataset, resources, model_config, config, seed).map_err(wrap)?;
        let preds = predict(&trained.model, test_set, resources)
            .map_err(|e| wrap(TrainError::Model(e)))?;
        Ok((trained, preds))
    };
    let results: Vec<_> = if config.parallel {
        (0..config.n_models).into_par_iter().map(run).collect()
    } else {
        (0..config.n_models).map(run).collect()
    };
    let mut models = Vec::with_capacity(config.n_models);
    let mut per_model = Vec::with_capacity(config.n_models);
    for r in results {
        let (m, p) = r?;
        models.push(m);
        per_model.push(p);
    }
    Ok((models, EnsemblePrediction::from_members(per_model)))
}

/// Seeded partition of `0..n` into `k` folds whose sizes differ by at most 1;
/// the larger folds come first.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if k < 2 {
        return Err(TrainError::Config("folds must be >= 2".into()));
    }
    if k > n {
        return Err(TrainError::Config(format!("{k} folds requested for {n} instances")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, 4));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub test_indices: Vec<usize>,
    pub score: f64,
    /// The ensemble predicted all zeros on this fold.
    pub zero_prediction: bool,
    pub predictions: Vec<f64>,
    pub loss_traces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
}

impl CvResult {
    pub fn scores(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.score).collect()
    }

    /// Loss traces and fold scores as flat records; fold scores use
    /// `epoch = 0` and `model = n_models` to keep the schema uniform.
    pub fn records(&self) -> Vec<TraceRecord> {
        let mut out = Vec::new();
        for f in &self.folds {
            for (m, trace) in f.loss_traces.iter().enumerate() {
                for (e, &v) in trace.iter().enumerate() {
                    out.push(TraceRecord {
                        fold: Some(f.fold),
                        model: m,
                        epoch: e,
                        value: v,
                    });
                }
            }
        }
        out
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// k-fold cross-validation of the ensemble.
pub fn cross_validate(
    dataset: &[RawInstance],
    resources: &Resources,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<CvResult, TrainError> {
    let folds = fold_assignment(dataset.len(), config.folds, config.base_seed)?;
    let gold = check_labeled(dataset)?;
    let mut results = Vec::with_capacity(folds.len());
    for (f, test_idx) in folds.iter().enumerate() {
        let wrap = |e: TrainError| TrainError::Fold {
            fold: f,
            source: Box::new(e),
        };
        let mut in_test = vec![false; dataset.len()];
        for &i in test_idx {
            in_test[i] = true;
        }
        let train: Vec<RawInstance> = dataset
            .iter()
            .zip(&in_test)
            .filter(|(_, &t)| !t)
            .map(|(d, _)| d.clone())
            .collect();
        let test: Vec<RawInstance> = test_idx.iter().map(|&i| dataset[i].clone()).collect();
        let (models, ens) =
            train_ensemble(&train, &test, resources, model_config, config).map_err(wrap)?;
        let fold_gold: Vec<f64> = test_idx.iter().map(|&i| gold[i]).collect();
        let metric = official_metric(&ens.mean, &fold_gold)
            .map_err(|e| wrap(TrainError::Data(e.to_string())))?;
        results.push(FoldResult {
            fold: f,
            test_indices: test_idx.clone(),
            score: metric.value,
            zero_prediction: metric.zero_prediction,
            predictions: ens.mean,
            loss_traces: models.into_iter().map(|m| m.loss_trace).collect(),
        });
    }
    let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
    let (mean, std) = mean_std(&scores);
    Ok(CvResult {
        folds: results,
        mean,
        std,
    })
}
