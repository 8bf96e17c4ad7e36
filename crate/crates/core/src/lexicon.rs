//! Word embeddings, affective lexicon and valence lexicon, plus the per-token
//! concatenated vector built from the first two.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::text::{COMPANY, NUMBER};

pub const PAD: &str = "<pad>";
pub const OOV: &str = "<oov>";

/// Reserved rows, always present at these indices.
pub const RESERVED: [&str; 4] = [PAD, OOV, COMPANY, NUMBER];
pub const PAD_INDEX: usize = 0;
pub const OOV_INDEX: usize = 1;

/// Half-width of the uniform range used for rows that have no pre-trained
/// value (`<oov>`, and the sentinels when the file does not define them).
pub const RESERVED_INIT_RANGE: f64 = 0.05;
/// Seed for sampling reserved rows at load time.
pub const RESERVED_INIT_SEED: u64 = 0x5eed_0001;

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed lexicon {path}, line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("lexicon {0} holds no entries")]
    Empty(String),
}

fn read(path: &Path) -> Result<String, LexiconError> {
    fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// SHA-256 over the raw bytes of a lexicon file.
pub fn file_digest(path: &Path) -> Result<[u8; 32], LexiconError> {
    let bytes = fs::read(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Sha256::digest(&bytes).into())
}

fn parse_value(field: &str, path: &str, line: usize) -> Result<f64, LexiconError> {
    let v: f64 = field.parse().map_err(|_| LexiconError::Malformed {
        path: path.to_string(),
        line,
        reason: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(LexiconError::Malformed {
            path: path.to_string(),
            line,
            reason: format!("non-finite value {field:?}"),
        });
    }
    Ok(v)
}

/// Pre-trained embedding table with four reserved rows at the front.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    vectors: Vec<f64>,
    dim: usize,
    /// Tokens defined more than once in the source, with the line of the
    /// occurrence that was kept.
    pub duplicates: Vec<(String, usize)>,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` pairs; later duplicates win.
    pub fn from_entries<I>(dim: usize, entries: I) -> Self
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(RESERVED_INIT_SEED);
        let mut table = EmbeddingTable {
            index: HashMap::new(),
            tokens: Vec::new(),
            vectors: Vec::new(),
            dim,
            duplicates: Vec::new(),
        };
        for (i, tok) in RESERVED.iter().enumerate() {
            let row: Vec<f64> = if i == PAD_INDEX {
                vec![0.0; dim]
            } else {
                (0..dim)
                    .map(|_| rng.gen_range(-RESERVED_INIT_RANGE..RESERVED_INIT_RANGE))
                    .collect()
            };
            table.push_row(tok, &row);
        }
        for (n, (tok, vec)) in entries.into_iter().enumerate() {
            assert_eq!(vec.len(), dim, "embedding row of wrong length");
            if tok == PAD {
                // the padding row stays zero whatever the file says
                continue;
            }
            match table.index.get(&tok) {
                Some(&row) => {
                    if row >= RESERVED.len() {
                        table.duplicates.push((tok.clone(), n + 1));
                    }
                    table.vectors[row * dim..(row + 1) * dim].copy_from_slice(&vec);
                }
                None => table.push_row(&tok, &vec),
            }
        }
        table
    }

    fn push_row(&mut self, tok: &str, row: &[f64]) {
        self.index.insert(tok.to_string(), self.tokens.len());
        self.tokens.push(tok.to_string());
        self.vectors.extend_from_slice(row);
    }

    /// Parses whitespace-separated `token v1 … vd` lines.
    pub fn parse(text: &str, path: &str) -> Result<Self, LexiconError> {
        let mut dim = None;
        let mut entries = Vec::new();
        let mut lines = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let mut fields = line.split_whitespace();
            let Some(tok) = fields.next() else { continue };
            let values = fields
                .map(|f| parse_value(f, path, line_no))
                .collect::<Result<Vec<_>, _>>()?;
            if values.is_empty() {
                return Err(LexiconError::Malformed {
                    path: path.into(),
                    line: line_no,
                    reason: "token without vector".into(),
                });
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(LexiconError::Malformed {
                        path: path.into(),
                        line: line_no,
                        reason: format!("expected {d} components, found {}", values.len()),
                    })
                }
                _ => {}
            }
            entries.push((tok.to_string(), values));
            lines.push(line_no);
        }
        let dim = dim.ok_or_else(|| LexiconError::Empty(path.into()))?;
        let mut table = Self::from_entries(dim, entries);
        for dup in &mut table.duplicates {
            dup.1 = lines[dup.1 - 1];
            log::warn!("{path}: duplicate embedding for {:?}, keeping line {}", dup.0, dup.1);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&read(path)?, &path.display().to_string())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows, reserved rows included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    /// The token's row, or the `<oov>` row.
    pub fn lookup(&self, token: &str) -> &[f64] {
        self.row(self.index_of(token).unwrap_or(OOV_INDEX))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Multi-dimensional affect scores per token.
#[derive(Debug, Clone, Default)]
pub struct AffectiveLexicon {
    entries: HashMap<String, Vec<f64>>,
    dimension_names: Vec<String>,
}

impl AffectiveLexicon {
    pub fn new(dimension_names: Vec<String>, entries: HashMap<String, Vec<f64>>) -> Self {
        let d = dimension_names.len();
        assert!(entries.values().all(|v| v.len() == d));
        Self {
            entries,
            dimension_names,
        }
    }

    /// Parses a TSV whose header row names the dimensions.
    pub fn parse(text: &str, path: &str) -> Result<Self, LexiconError> {
        let mut rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = rows.next().ok_or_else(|| LexiconError::Empty(path.into()))?;
        let names: Vec<String> = header
            .split('\t')
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        if names.is_empty() {
            return Err(LexiconError::Malformed {
                path: path.into(),
                line: 1,
                reason: "header names no affective dimensions".into(),
            });
        }
        if names.iter().all(|n| n.parse::<f64>().is_ok()) {
            return Err(LexiconError::Malformed {
                path: path.into(),
                line: 1,
                reason: "missing header row".into(),
            });
        }
        let mut entries = HashMap::new();
        for (n, line) in rows {
            let line_no = n + 1;
            let mut fields = line.split('\t');
            let tok = fields.next().unwrap_or_default().trim();
            let values = fields
                .map(|f| parse_value(f.trim(), path, line_no))
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != names.len() {
                return Err(LexiconError::Malformed {
                    path: path.into(),
                    line: line_no,
                    reason: format!("expected {} scores, found {}", names.len(), values.len()),
                });
            }
            entries.insert(tok.to_string(), values);
        }
        Ok(Self {
            entries,
            dimension_names: names,
        })
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&read(path)?, &path.display().to_string())
    }

    pub fn dim(&self) -> usize {
        self.dimension_names.len()
    }

    pub fn dimension_names(&self) -> &[String] {
        &self.dimension_names
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }
}

/// Single signed valence per token.
#[derive(Debug, Clone, Default)]
pub struct ValenceLexicon {
    entries: HashMap<String, f64>,
}

impl ValenceLexicon {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            entries: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    /// `token⇥valence` rows; extra columns are ignored.
    pub fn parse(text: &str, path: &str) -> Result<Self, LexiconError> {
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let tok = fields.next().unwrap_or_default().trim();
            let value = fields.next().ok_or_else(|| LexiconError::Malformed {
                path: path.into(),
                line: n + 1,
                reason: "missing valence column".into(),
            })?;
            entries.insert(tok.to_string(), parse_value(value.trim(), path, n + 1)?);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&read(path)?, &path.display().to_string())
    }

    pub fn get(&self, token: &str) -> Option<f64> {
        self.entries.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every valence multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
        }
    }
}

/// Concatenated `[embedding ‖ affect]` vector for one token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVector(pub Vec<f64>);

impl TokenVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// The `<oov>` embedding row for unknown tokens, zeros for missing affect.
pub fn token_vector(token: &str, emb: &EmbeddingTable, aff: &AffectiveLexicon) -> TokenVector {
    let mut v = Vec::with_capacity(emb.dim() + aff.dim());
    v.extend_from_slice(emb.lookup(token));
    match aff.get(token) {
        Some(a) => v.extend_from_slice(a),
        None => v.extend(std::iter::repeat(0.0).take(aff.dim())),
    }
    TokenVector(v)
}

/// Hit and miss counts per lexicon over a token stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Coverage {
    pub embedding_hits: usize,
    pub embedding_misses: usize,
    pub affective_hits: usize,
    pub affective_misses: usize,
}

/// Both token-level lexica, loaded together.
#[derive(Debug, Clone)]
pub struct LexiconStore {
    pub embeddings: EmbeddingTable,
    pub affective: AffectiveLexicon,
}

impl LexiconStore {
    pub fn new(embeddings: EmbeddingTable, affective: AffectiveLexicon) -> Self {
        Self {
            embeddings,
            affective,
        }
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim() + self.affective.dim()
    }

    pub fn token_vector(&self, token: &str) -> TokenVector {
        token_vector(token, &self.embeddings, &self.affective)
    }

    /// Whether either lexicon knows the token.
    pub fn knows(&self, token: &str) -> bool {
        self.embeddings.contains(token) || self.affective.get(token).is_some()
    }

    pub fn coverage<'a, I>(&self, tokens: I) -> Coverage
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut c = Coverage::default();
        for t in tokens {
            if self.embeddings.contains(t) {
                c.embedding_hits += 1;
            } else {
                c.embedding_misses += 1;
            }
            if self.affective.get(t).is_some() {
                c.affective_hits += 1;
            } else {
                c.affective_misses += 1;
            }
        }
        c
    }
}
