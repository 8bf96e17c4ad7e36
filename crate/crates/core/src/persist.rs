//! Binary model files.
//!
//! Layout, little-endian throughout:
//! `FSNT`, format version (u32), seed (u64), JSON header length (u64) and
//! bytes holding the model and rule configs, three SHA-256 lexicon digests
//! (embeddings, affective, valence; zeros when unused), vocabulary size (u64)
//! and tokens as length-prefixed UTF-8, tensor count (u32), then per tensor
//! its rank (u32), dims (u64 each) and values (f64 each).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig, ModelParameters, Vocabulary};
use crate::tensor::Tensor;
use crate::vader::RuleConfig;

pub const MAGIC: &[u8; 4] = b"FSNT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    Magic,
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("{which} lexicon differs from the one the model was trained with")]
    DigestMismatch { which: &'static str },
}

/// SHA-256 digests of the lexicon files a model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LexiconDigests {
    pub embeddings: [u8; 32],
    pub affective: [u8; 32],
    pub valence: [u8; 32],
}

impl LexiconDigests {
    /// Fails on the first lexicon whose digest differs from the recorded
    /// one, including a lexicon that is now missing. Lexica the model did not
    /// use (all-zero digest) are skipped.
    pub fn check(&self, actual: &LexiconDigests) -> Result<(), PersistError> {
        let pairs = [
            ("embedding", self.embeddings, actual.embeddings),
            ("affective", self.affective, actual.affective),
            ("valence", self.valence, actual.valence),
        ];
        for (which, a, b) in pairs {
            if a != [0; 32] && a != b {
                return Err(PersistError::DigestMismatch { which });
            }
        }
        Ok(())
    }
}

pub fn hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    rules: RuleConfig,
}

/// A trained network with what is needed to use it again.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub seed: u64,
    pub model: Model,
    pub rules: RuleConfig,
    pub digests: LexiconDigests,
}

impl ModelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            model: self.model.config.clone(),
            rules: self.rules.clone(),
        })
        .expect("configs serialize");
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for d in [&self.digests.embeddings, &self.digests.affective, &self.digests.valence] {
            out.extend_from_slice(d);
        }
        let tokens = self.model.params.vocabulary.tokens();
        out.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
        for t in tokens {
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            out.extend_from_slice(t.as_bytes());
        }
        let tensors = self.model.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PersistError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(PersistError::Magic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(PersistError::Version(version));
        }
        let seed = r.u64()?;
        let header_len = r.len_u64()?;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| PersistError::Corrupt(format!("header: {e}")))?;
        let mut digests = LexiconDigests::default();
        for d in [&mut digests.embeddings, &mut digests.affective, &mut digests.valence] {
            d.copy_from_slice(r.take(32)?);
        }
        let n_tokens = r.len_u64()?;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 20));
        for _ in 0..n_tokens {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?)
                .map_err(|_| PersistError::Corrupt("token is not UTF-8".into()))?;
            tokens.push(s.to_string());
        }
        let vocabulary = Vocabulary::from_tokens(tokens)
            .ok_or_else(|| PersistError::Corrupt("vocabulary lacks reserved tokens".into()))?;
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors.min(64));
        for _ in 0..n_tensors {
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.len_u64()).collect::<Result<_, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| PersistError::Corrupt("tensor larger than file".into()))?;
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            tensors.push(Tensor::new(shape, data).map_err(|e| PersistError::Corrupt(e.to_string()))?);
        }
        if r.remaining() != 0 {
            return Err(PersistError::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        let params = ModelParameters::from_tensors(&header.model, vocabulary, tensors)
            .map_err(|e| PersistError::Corrupt(e.to_string()))?;
        Ok(Self {
            seed,
            model: Model {
                config: header.model,
                params,
            },
            rules: header.rules,
            digests,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if n > self.remaining() {
            return Err(PersistError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_u64(&mut self) -> Result<usize, PersistError> {
        usize::try_from(self.u64()?).map_err(|_| PersistError::Corrupt("length overflow".into()))
    }

    fn f64(&mut self) -> Result<f64, PersistError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
