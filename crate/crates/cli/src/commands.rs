use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use finsent::dataset::{self, Format};
use finsent::eval::{AblationTable, EvaluationReport};
use finsent::lexicon::file_digest;
use finsent::model::ModelError;
use finsent::persist::{hex, ModelFile};
use finsent::trainer::{self, EnsemblePrediction, TraceRecord, TrainError};
use finsent::RawInstance;

use crate::config::{RunConfig, SNAPSHOT};

pub const MANIFEST: &str = "manifest.json";

/// Exit code 2 for bad input or configuration, 3 for failures during a run.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Runtime(e) => e,
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn invalid(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }

    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn is_input_error(e: &TrainError) -> bool {
    match e {
        TrainError::Config(_) | TrainError::Data(_) => true,
        TrainError::Model(ModelError::Config(_)) => true,
        TrainError::Member { source, .. } | TrainError::Fold { source, .. } => is_input_error(source),
        _ => false,
    }
}

fn train_failure(e: TrainError) -> Failure {
    if is_input_error(&e) {
        Failure::Invalid(e.into())
    } else {
        Failure::Runtime(e.into())
    }
}

fn labeled_train_set(cfg: &RunConfig) -> Outcome<Vec<RawInstance>> {
    let path = cfg
        .data
        .train
        .as_deref()
        .ok_or_else(|| Failure::Invalid(anyhow!("no training data given (--data or [data].train)")))?;
    dataset::load(path, cfg.format(), true).invalid()
}

fn write(path: &Path, text: &str) -> Outcome<()> {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestModel {
    pub file: String,
    pub seed: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestLexicon {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a training job exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: String,
    pub config_sha256: String,
    pub models: Vec<ManifestModel>,
    pub lexicons: Vec<ManifestLexicon>,
}

pub fn train(cfg: &RunConfig, models_dir: &Path) -> Outcome<()> {
    cfg.validate().invalid()?;
    let data = labeled_train_set(cfg)?;
    let (resources, digests) = cfg.load_resources().invalid()?;
    log::info!(
        "training {} models on {} instances",
        cfg.train.n_models,
        data.len()
    );
    let (models, _) =
        trainer::train_ensemble(&data, &[], &resources, &cfg.model, &cfg.train).map_err(train_failure)?;

    let snapshot = cfg.write_snapshot(models_dir).runtime()?;
    let mut manifest = Manifest {
        config: SNAPSHOT.into(),
        config_sha256: hex(&file_digest(&snapshot).runtime()?),
        models: vec![],
        lexicons: vec![],
    };
    let l = &cfg.lexicons;
    for p in [&l.embeddings, &l.affective, &l.valence, &l.negators, &l.boosters].into_iter().flatten() {
        manifest.lexicons.push(ManifestLexicon {
            path: p.display().to_string(),
            sha256: hex(&file_digest(p).runtime()?),
        });
    }
    let mut trace = String::new();
    for (n, m) in models.into_iter().enumerate() {
        let name = format!("model-{n:02}.fsnt");
        let path = models_dir.join(&name);
        let file = ModelFile {
            seed: m.seed,
            model: m.model,
            rules: cfg.rules.clone(),
            digests,
        };
        file.save(&path)
            .with_context(|| format!("writing {}", path.display()))
            .runtime()?;
        manifest.models.push(ManifestModel {
            file: name,
            seed: m.seed,
            sha256: hex(&file_digest(&path).runtime()?),
        });
        for (epoch, &value) in m.loss_trace.iter().enumerate() {
            let rec = TraceRecord {
                fold: None,
                model: n,
                epoch,
                value,
            };
            trace.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            trace.push('\n');
        }
        println!(
            "model {n}: seed {} final epoch loss {:.6}",
            m.seed,
            m.loss_trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    write(&models_dir.join("loss_trace.jsonl"), &trace)?;
    write(
        &models_dir.join(MANIFEST),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;
    println!("wrote {} models to {}", manifest.models.len(), models_dir.display());
    Ok(())
}

pub struct PredictArgs {
    pub models_dir: PathBuf,
    pub data: PathBuf,
    pub format: Option<Format>,
    pub unlabeled: bool,
    pub config: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn predict(args: &PredictArgs) -> Outcome<()> {
    let manifest_path = args.models_dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path)
            .with_context(|| format!("reading {}", manifest_path.display()))
            .invalid()?,
    )
    .with_context(|| format!("parsing {}", manifest_path.display()))
    .invalid()?;
    let config_path = args
        .config
        .clone()
        .unwrap_or_else(|| args.models_dir.join(&manifest.config));
    let mut cfg = RunConfig::resolve(Some(&config_path), &Default::default()).invalid()?;

    let mut files = Vec::with_capacity(manifest.models.len());
    for m in &manifest.models {
        let path = args.models_dir.join(&m.file);
        files.push(
            ModelFile::load(&path)
                .with_context(|| format!("loading {}", path.display()))
                .invalid()?,
        );
    }
    let first = files
        .first()
        .ok_or_else(|| Failure::Invalid(anyhow!("manifest lists no models")))?;
    if files
        .iter()
        .any(|f| f.model.config != first.model.config || f.rules != first.rules)
    {
        return Err(Failure::Invalid(anyhow!("model files were trained with different configs")));
    }
    cfg.model = first.model.config.clone();
    cfg.rules = first.rules.clone();
    let (resources, digests) = cfg.load_resources().invalid()?;
    for (f, m) in files.iter().zip(&manifest.models) {
        f.digests
            .check(&digests)
            .with_context(|| format!("model {}", m.file))
            .invalid()?;
    }

    let format = args.format.unwrap_or_else(|| Format::from_path(&args.data));
    let data = dataset::load(&args.data, format, !args.unlabeled).invalid()?;
    let per_model = files
        .iter()
        .map(|f| trainer::predict(&f.model, &data, &resources))
        .collect::<Result<Vec<_>, _>>()
        .runtime()?;
    let ens = EnsemblePrediction::from_members(per_model);
    let mut out = String::new();
    for (inst, p) in data.iter().zip(&ens.mean) {
        let _ = writeln!(out, "{}\t{}\t{}", inst.headline, inst.company, p);
    }
    match &args.output {
        Some(path) => write(path, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}

type Key = (String, String);

/// Pairs predictions with gold rows by (headline, company), in gold order.
pub fn align(predictions: &[RawInstance], gold: &[RawInstance]) -> Result<(Vec<f64>, Vec<f64>), Vec<Key>> {
    let mut pool: HashMap<Key, VecDeque<f64>> = HashMap::new();
    for p in predictions {
        pool.entry((p.headline.clone(), p.company.clone()))
            .or_default()
            .push_back(p.score.unwrap_or(0.0));
    }
    let mut missing = Vec::new();
    let (mut pv, mut gv) = (Vec::new(), Vec::new());
    for g in gold {
        let key = (g.headline.clone(), g.company.clone());
        match pool.get_mut(&key).and_then(VecDeque::pop_front) {
            Some(p) => {
                pv.push(p);
                gv.push(g.score.unwrap_or(0.0));
            }
            None => missing.push(key),
        }
    }
    let mut extra: Vec<Key> = pool
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, _)| k)
        .collect();
    extra.sort();
    missing.extend(extra);
    if missing.is_empty() {
        Ok((pv, gv))
    } else {
        Err(missing)
    }
}

pub fn evaluate(predictions: &Path, gold: &Path, format: Option<Format>, output: Option<&Path>) -> Outcome<()> {
    let preds = dataset::load(predictions, Format::Tsv, true).invalid()?;
    let gold_set = dataset::load(gold, format.unwrap_or_else(|| Format::from_path(gold)), true).invalid()?;
    let (p, g) = align(&preds, &gold_set).map_err(|keys| {
        let shown: Vec<String> = keys.iter().take(20).map(|(h, c)| format!("  {h} | {c}")).collect();
        Failure::Invalid(anyhow!(
            "{} instances do not match between predictions and gold:\n{}",
            keys.len(),
            shown.join("\n")
        ))
    })?;
    let report = EvaluationReport::new("predictions", p, g).invalid()?;
    println!("metric {:.6} over {} instances", report.metric, report.n_instances);
    if report.zero_prediction {
        println!("warning: all predictions are zero; scored 0 by convention");
    }
    if let Some(path) = output {
        write(path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FoldSummary {
    fold: usize,
    size: usize,
    score: f64,
    zero_prediction: bool,
}

#[derive(Debug, Serialize)]
struct CvReport {
    folds: Vec<FoldSummary>,
    mean: f64,
    std: f64,
}

pub fn cv(cfg: &RunConfig, output: &Path) -> Outcome<()> {
    cfg.validate().invalid()?;
    let data = labeled_train_set(cfg)?;
    let (resources, _) = cfg.load_resources().invalid()?;
    cfg.write_snapshot(output).runtime()?;
    let result = trainer::cross_validate(&data, &resources, &cfg.model, &cfg.train).map_err(train_failure)?;
    let report = CvReport {
        folds: result
            .folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold,
                size: f.test_indices.len(),
                score: f.score,
                zero_prediction: f.zero_prediction,
            })
            .collect(),
        mean: result.mean,
        std: result.std,
    };
    for f in &report.folds {
        println!("fold {}: {} instances, metric {:.4}", f.fold, f.size, f.score);
    }
    println!("mean {:.4} ± {:.4}", report.mean, report.std);
    write(
        &output.join("cv_report.json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    let trace: String = result
        .records()
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    write(&output.join("loss_trace.jsonl"), &trace)
}

pub fn ablate(cfg: &RunConfig, output: &Path) -> Outcome<()> {
    cfg.validate().invalid()?;
    let data = labeled_train_set(cfg)?;
    let (resources, _) = cfg.load_resources().invalid()?;
    cfg.write_snapshot(output).runtime()?;
    let table = match &cfg.data.test {
        Some(test_path) => {
            let test = dataset::load(test_path, cfg.format(), true).invalid()?;
            AblationTable::held_out(&data, &test, &resources, &cfg.model, &cfg.train)
        }
        None => AblationTable::cross_validated(&data, &resources, &cfg.model, &cfg.train),
    }
    .map_err(train_failure)?;
    let text = table.render();
    print!("{text}");
    write(&output.join("ablation.txt"), &text)?;
    write(&output.join("ablation.jsonl"), &table.json_lines())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn align_matches_keys_in_gold_order() {
        let preds = vec![
            RawInstance::new("b", "B", Some(0.2)),
            RawInstance::new("a", "A", Some(0.1)),
        ];
        let gold = vec![
            RawInstance::new("a", "A", Some(0.5)),
            RawInstance::new("b", "B", Some(-0.5)),
        ];
        assert_eq!(align(&preds, &gold).unwrap(), (vec![0.1, 0.2], vec![0.5, -0.5]));
    }

    #[test]
    fn align_lists_unmatched() {
        let preds = vec![RawInstance::new("x", "X", Some(0.2))];
        let gold = vec![RawInstance::new("a", "A", Some(0.5))];
        let keys = align(&preds, &gold).unwrap_err();
        assert_eq!(keys, vec![("a".into(), "A".into()), ("x".into(), "X".into())]);
    }

    #[test]
    fn nested_input_errors_exit_with_two() {
        let e = TrainError::Fold {
            fold: 1,
            source: Box::new(TrainError::Member {
                index: 0,
                source: Box::new(TrainError::Data("x".into())),
            }),
        };
        assert_eq!(train_failure(e).exit_code(), 2);
        assert_eq!(train_failure(TrainError::NonFiniteLoss { epoch: 0, batch: 0 }).exit_code(), 3);
    }
}
