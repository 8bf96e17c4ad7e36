//! Run configuration: TOML file plus command-line overrides, resolved to
//! absolute paths and written back out as a snapshot.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use finsent::dataset::Format;
use finsent::lexicon::{file_digest, AffectiveLexicon, EmbeddingTable, LexiconStore, ValenceLexicon};
use finsent::persist::LexiconDigests;
use finsent::vader::{RuleConfig, ValenceScorer, WordLists};
use finsent::{ModelConfig, Resources, TrainConfig};

pub const SNAPSHOT: &str = "resolved_config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconPaths {
    /// Whitespace-separated `token v1 … vd` rows.
    pub embeddings: Option<PathBuf>,
    /// TSV with a header of dimension names.
    pub affective: Option<PathBuf>,
    /// `token<TAB>valence` rows.
    pub valence: Option<PathBuf>,
    pub negators: Option<PathBuf>,
    pub boosters: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataPaths,
    pub lexicons: LexiconPaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rules: RuleConfig,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub n_models: Option<usize>,
    pub no_embeddings: bool,
    pub no_preprocessing: bool,
    pub no_vader: bool,
    pub embeddings: Option<PathBuf>,
    pub affective: Option<PathBuf>,
    pub valence: Option<PathBuf>,
}

fn absolute(base: &Path, p: &Path) -> anyhow::Result<PathBuf> {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).with_context(|| format!("resolving {}", p.display()))
}

fn rebase(base: &Path, slot: &mut Option<PathBuf>) -> anyhow::Result<()> {
    if let Some(p) = slot.as_mut() {
        *p = absolute(base, p)?;
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (or starts from defaults), makes its paths absolute
    /// relative to the file's directory, then applies the overrides.
    pub fn resolve(path: Option<&Path>, o: &Overrides) -> anyhow::Result<Self> {
        let cwd = std::env::current_dir()?;
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let mut c = Self::parse(&text).with_context(|| format!("parsing {}", p.display()))?;
                let dir = absolute(&cwd, p)?.parent().map(Path::to_path_buf).unwrap_or(cwd.clone());
                for slot in [
                    &mut c.data.train,
                    &mut c.data.test,
                    &mut c.lexicons.embeddings,
                    &mut c.lexicons.affective,
                    &mut c.lexicons.valence,
                    &mut c.lexicons.negators,
                    &mut c.lexicons.boosters,
                ] {
                    rebase(&dir, slot)?;
                }
                c
            }
            None => Self::default(),
        };
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| -> anyhow::Result<()> {
            if let Some(p) = v {
                *slot = Some(absolute(&cwd, p)?);
            }
            Ok(())
        };
        set(&mut cfg.data.train, &o.data)?;
        set(&mut cfg.data.test, &o.test)?;
        set(&mut cfg.lexicons.embeddings, &o.embeddings)?;
        set(&mut cfg.lexicons.affective, &o.affective)?;
        set(&mut cfg.lexicons.valence, &o.valence)?;
        if o.format.is_some() {
            cfg.data.format = o.format;
        }
        if let Some(s) = o.seed {
            cfg.train.base_seed = s;
        }
        if let Some(f) = o.folds {
            cfg.train.folds = f;
        }
        if let Some(n) = o.n_models {
            cfg.train.n_models = n;
        }
        if o.no_embeddings {
            cfg.model.use_embeddings = false;
        }
        if o.no_preprocessing {
            cfg.model.preprocess = false;
        }
        if o.no_vader {
            cfg.model.use_vader = false;
        }
        if cfg.data.format.is_none() {
            cfg.data.format = Some(cfg.data.train.as_deref().map_or(Format::Tsv, Format::from_path));
        }
        Ok(cfg)
    }

    /// Config-level checks; lexicon files are checked when loaded.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.rules.validate()?;
        let l = &self.lexicons;
        if self.model.use_embeddings {
            if self.model.use_pretrained && l.embeddings.is_none() {
                bail!("use_embeddings is on but no embeddings lexicon is configured");
            }
            if self.model.use_affective && l.affective.is_none() {
                bail!("use_affective is on but no affective lexicon is configured");
            }
        }
        if self.model.use_vader && l.valence.is_none() {
            bail!("use_vader is on but no valence lexicon is configured");
        }
        if l.negators.is_some() != l.boosters.is_some() {
            bail!("negators and boosters lists must be given together");
        }
        for p in [
            &self.data.train,
            &self.data.test,
            &l.embeddings,
            &l.affective,
            &l.valence,
            &l.negators,
            &l.boosters,
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                bail!("{} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn format(&self) -> Format {
        self.data.format.unwrap_or(Format::Tsv)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn write_snapshot(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(SNAPSHOT);
        std::fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Loads the lexica and word lists the model config asks for. The
    /// embedding table comes with an affective lexicon; a missing one is
    /// replaced by an empty zero-width lexicon.
    pub fn load_resources(&self) -> anyhow::Result<(Resources, LexiconDigests)> {
        let l = &self.lexicons;
        let mut digests = LexiconDigests::default();
        let store = match &l.embeddings {
            Some(ep) if self.model.use_embeddings || l.affective.is_some() => {
                let emb = EmbeddingTable::load(ep)?;
                digests.embeddings = file_digest(ep)?;
                let aff = match &l.affective {
                    Some(ap) => {
                        digests.affective = file_digest(ap)?;
                        AffectiveLexicon::load(ap)?
                    }
                    None => AffectiveLexicon::new(vec![], HashMap::new()),
                };
                Some(LexiconStore::new(emb, aff))
            }
            _ => None,
        };
        let valence = match &l.valence {
            Some(vp) if self.model.use_vader => {
                digests.valence = file_digest(vp)?;
                ValenceLexicon::load(vp)?
            }
            _ => ValenceLexicon::from_pairs(Vec::<(String, f64)>::new()),
        };
        let lists = match (&l.negators, &l.boosters) {
            (Some(n), Some(b)) => WordLists::load(n, b, self.rules.booster_increment)?,
            _ => WordLists::bundled(self.rules.booster_increment),
        };
        let scorer = ValenceScorer::new(valence, lists, self.rules.clone());
        Ok((Resources { store, scorer }, digests))
    }
}
