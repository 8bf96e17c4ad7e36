//! Reading and writing headline datasets as TSV or JSON lines.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::text::RawInstance;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Row {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{0}: no instances")]
    Empty(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Jsonl,
}

impl Format {
    /// Guesses from the extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => Format::Jsonl,
            _ => Format::Tsv,
        }
    }
}

fn parse_score(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("score {s:?} is not a number"))?;
    if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
        return Err(format!("score {v} outside [-1, 1]"));
    }
    Ok(v)
}

fn check(inst: RawInstance, path: &str, line: usize) -> Result<RawInstance, DatasetError> {
    inst.validate().map_err(|reason| DatasetError::Row {
        path: path.to_string(),
        line,
        reason,
    })?;
    Ok(inst)
}

/// `headline<TAB>company<TAB>score` rows. A first row whose score column is
/// not numeric is taken as a header. With `labeled = false` the score column
/// may be absent.
pub fn parse_tsv(text: &str, path: &str, labeled: bool) -> Result<Vec<RawInstance>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.strip_suffix('\r').unwrap_or(raw);
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        let err = |reason: String| DatasetError::Row {
            path: path.to_string(),
            line,
            reason,
        };
        let score = match (fields.len(), labeled) {
            (3, _) => match parse_score(fields[2]) {
                Ok(s) => Some(s),
                Err(_) if line == 1 && fields[2].trim().parse::<f64>().is_err() => continue,
                Err(e) if labeled => return Err(err(e)),
                Err(_) => None,
            },
            (2, false) => None,
            (n, _) => {
                return Err(err(format!(
                    "expected {} tab-separated fields, found {n}",
                    if labeled { "3" } else { "2 or 3" }
                )))
            }
        };
        out.push(check(RawInstance::new(fields[0], fields[1], score), path, line)?);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty(path.to_string()));
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScoreField {
    Number(f64),
    Text(String),
}

#[derive(Deserialize)]
struct JsonRow {
    #[serde(alias = "headline")]
    title: String,
    company: String,
    #[serde(default, alias = "score")]
    sentiment: Option<ScoreField>,
}

/// One object per line with `title`, `company` and `sentiment`; the
/// sentiment may be a number or a numeric string.
pub fn parse_jsonl(text: &str, path: &str, labeled: bool) -> Result<Vec<RawInstance>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |reason: String| DatasetError::Row {
            path: path.to_string(),
            line,
            reason,
        };
        let row: JsonRow = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let score = match row.sentiment {
            Some(ScoreField::Number(v)) => Some(parse_score(&v.to_string()).map_err(err)?),
            Some(ScoreField::Text(s)) => Some(parse_score(&s).map_err(err)?),
            None if labeled => return Err(err("missing sentiment".into())),
            None => None,
        };
        out.push(check(RawInstance::new(row.title, row.company, score), path, line)?);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty(path.to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path, format: Format, labeled: bool) -> Result<Vec<RawInstance>, DatasetError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: name.clone(),
        source,
    })?;
    match format {
        Format::Tsv => parse_tsv(&text, &name, labeled),
        Format::Jsonl => parse_jsonl(&text, &name, labeled),
    }
}

/// TSV with scores printed in shortest round-trip form; unlabeled rows get
/// two fields.
pub fn to_tsv(instances: &[RawInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        match inst.score {
            Some(s) => {
                let _ = writeln!(out, "{}\t{}\t{}", inst.headline, inst.company, s);
            }
            None => {
                let _ = writeln!(out, "{}\t{}", inst.headline, inst.company);
            }
        }
    }
    out
}
