//! Synthetic lexica and headlines.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use finsent::lexicon::{AffectiveLexicon, EmbeddingTable, LexiconStore, ValenceLexicon};
use finsent::RawInstance;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SYLLABLES: [&str; 20] = [
    "ba", "ke", "lo", "mi", "nu", "pa", "re", "si", "to", "vu", "da", "fe", "go", "hi", "ju", "ra", "se", "ti", "wo", "zy",
];
const COMPANIES: [&str; 6] = ["Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay"];

/// Distinct lowercase letter-only words, so tokenization leaves them whole.
pub fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..3).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// A corpus whose targets depend only on the affective scores of its
/// sentiment words. Embedding rows are noise, valence lexicon entries are
/// words that never occur.
pub struct SignalFixture {
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub affect: HashMap<String, Vec<f64>>,
    pub valence: Vec<(String, f64)>,
    pub data: Vec<RawInstance>,
}

impl SignalFixture {
    pub fn new(n_headlines: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all = words(&mut rng, 180);
        let (sentiment, filler) = all.split_at(150);
        let mut embeddings = Vec::new();
        let mut affect = HashMap::new();
        let mut polarity = HashMap::new();
        for (i, w) in sentiment.iter().enumerate() {
            let positive = i % 2 == 0;
            let strong = rng.gen_range(0.5..1.0);
            let weak = rng.gen_range(0.0..0.2);
            let (p, n) = if positive { (strong, weak) } else { (weak, strong) };
            affect.insert(w.clone(), vec![p, n]);
            polarity.insert(w.clone(), p - n);
        }
        for w in all.iter() {
            embeddings.push((w.clone(), (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect()));
        }
        let mut data = Vec::with_capacity(n_headlines);
        for _ in 0..n_headlines {
            let company = *COMPANIES.choose(&mut rng).unwrap();
            let mut toks: Vec<&str> = vec![company];
            let mut signal: f64 = 0.0;
            for _ in 0..2 {
                let w = sentiment.choose(&mut rng).unwrap();
                signal += polarity[w];
                toks.push(w);
            }
            for _ in 0..3 {
                toks.push(filler.choose(&mut rng).unwrap());
            }
            toks[1..].shuffle(&mut rng);
            let score = ((1.2 * signal).tanh() + rng.gen_range(-0.1..0.1)).clamp(-1.0, 1.0);
            // three decimals, as in annotated data
            let score = (score * 1000.0).round() / 1000.0;
            data.push(RawInstance::new(toks.join(" "), company, Some(score)));
        }
        let valence = vec![("unrelatedword".to_string(), 2.0), ("otherword".to_string(), -2.0)];
        Self {
            embeddings,
            affect,
            valence,
            data,
        }
    }

    pub fn store(&self) -> LexiconStore {
        LexiconStore::new(
            EmbeddingTable::from_entries(8, self.embeddings.clone()),
            AffectiveLexicon::new(vec!["happy".into(), "sad".into()], self.affect.clone()),
        )
    }

    pub fn valence(&self) -> ValenceLexicon {
        ValenceLexicon::from_pairs(self.valence.clone())
    }

    /// Writes lexica, data and a run config into `dir`; returns the config path.
    pub fn write(&self, dir: &Path, extra_config: &str) -> std::path::PathBuf {
        let mut emb = String::new();
        for (w, v) in &self.embeddings {
            let vals: Vec<String> = v.iter().map(f64::to_string).collect();
            let _ = writeln!(emb, "{w} {}", vals.join(" "));
        }
        let mut aff = String::from("word\thappy\tsad\n");
        let mut keys: Vec<&String> = self.affect.keys().collect();
        keys.sort();
        for w in keys {
            let v = &self.affect[w];
            let _ = writeln!(aff, "{w}\t{}\t{}", v[0], v[1]);
        }
        let mut val = String::new();
        for (w, v) in &self.valence {
            let _ = writeln!(val, "{w}\t{v}");
        }
        std::fs::write(dir.join("emb.txt"), emb).unwrap();
        std::fs::write(dir.join("aff.tsv"), aff).unwrap();
        std::fs::write(dir.join("val.tsv"), val).unwrap();
        std::fs::write(dir.join("train.tsv"), finsent::dataset::to_tsv(&self.data)).unwrap();
        let config = format!(
            "[data]\ntrain = \"train.tsv\"\n\n[lexicons]\nembeddings = \"emb.txt\"\naffective = \"aff.tsv\"\nvalence = \"val.tsv\"\n\n{extra_config}"
        );
        let path = dir.join("run.toml");
        std::fs::write(&path, config).unwrap();
        path
    }
}
