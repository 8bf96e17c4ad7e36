//! The scoring network: token rows from a trainable embedding table, one
//! convolution + ReLU + global max-pool branch per filter width, the pooled
//! vectors concatenated with the sentence valence, dropout, an optional
//! hidden layer, and a single tanh output unit.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexicon::{LexiconStore, OOV_INDEX, PAD_INDEX, RESERVED};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::text::TokenSequence;
use crate::vader::ValenceScorer;

/// Uniform half-range for randomly initialized embedding rows.
pub const RANDOM_EMBEDDING_RANGE: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: TensorError,
    },
}

fn at(layer: impl Into<String>) -> impl FnOnce(TensorError) -> ModelError {
    move |source| ModelError::Layer {
        layer: layer.into(),
        source,
    }
}

/// Where the sentence valence enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaderPlacement {
    /// Joined to the pooled convolution outputs.
    AfterPooling,
    /// Prepended to the token sequence as an extra row `[v, 0, …, 0]`.
    Prepended,
}

/// Which valence features are fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaderFeatures {
    /// The normalized compound score (one value).
    Compound,
    /// Positive, negative and neutral proportions (three values).
    Breakdown,
}

impl VaderFeatures {
    pub fn width(self) -> usize {
        match self {
            VaderFeatures::Compound => 1,
            VaderFeatures::Breakdown => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutSite {
    Embeddings,
    Concat,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub dropout_rate: f64,
    pub dropout_site: DropoutSite,
    /// 0 connects the concatenated features straight to the output unit.
    pub hidden_units: usize,
    pub fine_tune_embeddings: bool,
    /// Off: both halves of every token row are randomly initialized.
    pub use_embeddings: bool,
    /// Finer switches for the two halves; ignored when `use_embeddings` is off.
    pub use_pretrained: bool,
    pub use_affective: bool,
    pub use_vader: bool,
    pub vader_features: VaderFeatures,
    pub vader_placement: VaderPlacement,
    /// Company and number masking before tokenization.
    pub preprocess: bool,
    pub max_sequence_length: usize,
    /// Row width when no lexicon supplies one.
    pub fallback_embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            filter_widths: vec![2, 3, 4],
            filters_per_width: 64,
            dropout_rate: 0.5,
            dropout_site: DropoutSite::Concat,
            hidden_units: 0,
            fine_tune_embeddings: true,
            use_embeddings: true,
            use_pretrained: true,
            use_affective: true,
            use_vader: true,
            vader_features: VaderFeatures::Compound,
            vader_placement: VaderPlacement::AfterPooling,
            preprocess: true,
            max_sequence_length: 50,
            fallback_embedding_dim: 50,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(ModelError::Config(
                "filter_widths must be non-empty and positive".into(),
            ));
        }
        if self.filters_per_width == 0 {
            return Err(ModelError::Config("filters_per_width must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.max_sequence_length < self.max_width() {
            return Err(ModelError::Config(
                "max_sequence_length smaller than the widest filter".into(),
            ));
        }
        if self.fallback_embedding_dim == 0 {
            return Err(ModelError::Config("fallback_embedding_dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn max_width(&self) -> usize {
        self.filter_widths.iter().copied().max().unwrap_or(1)
    }

    fn pretrained_on(&self) -> bool {
        self.use_embeddings && self.use_pretrained
    }

    fn affective_on(&self) -> bool {
        self.use_embeddings && self.use_affective
    }

    /// Whether any row is taken from a lexicon.
    pub fn needs_lexicon(&self) -> bool {
        self.pretrained_on() || self.affective_on()
    }

    /// Length of the vector entering the output (or hidden) dense layer.
    pub fn concat_len(&self) -> usize {
        let pooled = self.filter_widths.len() * self.filters_per_width;
        let vader = match (self.use_vader, self.vader_placement) {
            (true, VaderPlacement::AfterPooling) => self.vader_features.width(),
            _ => 0,
        };
        pooled + vader
    }
}

/// Token → row mapping; the reserved tokens occupy the first rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            v.insert(r);
        }
        v
    }
}

impl Vocabulary {
    /// Reserved tokens, then every token in order of first appearance.
    pub fn build<'a, I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut v = Self::default();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    /// Restores a vocabulary from its token list; the reserved tokens must
    /// lead.
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return None;
        }
        let index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return None;
        }
        Some(Self { tokens, index })
    }

    /// Adds the token if absent and returns its row.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Row for the token, `<oov>` when unknown.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(OOV_INDEX)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[K × width × D]`
    pub filters: Tensor,
    /// `[K]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out × in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// All trainable state of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub vocabulary: Vocabulary,
    /// `[|V| × D]`; row 0 is `<pad>` and stays zero.
    pub embedding: Tensor,
    pub convs: Vec<ConvLayer>,
    pub hidden: Option<DenseLayer>,
    pub output: DenseLayer,
}

impl ModelParameters {
    pub fn row_dim(&self) -> usize {
        self.embedding.shape()[1]
    }

    /// Every tensor in declared order: embedding, then per width filters and
    /// bias, then the hidden layer if any, then the output layer.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for c in &self.convs {
            out.push(&c.filters);
            out.push(&c.bias);
        }
        if let Some(h) = &self.hidden {
            out.push(&h.weights);
            out.push(&h.bias);
        }
        out.push(&self.output.weights);
        out.push(&self.output.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for c in &mut self.convs {
            out.push(&mut c.filters);
            out.push(&mut c.bias);
        }
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.weights);
            out.push(&mut h.bias);
        }
        out.push(&mut self.output.weights);
        out.push(&mut self.output.bias);
        out
    }

    /// Shapes implied by a config, vocabulary size and row width, in the
    /// order of [`ModelParameters::tensors`].
    pub fn expected_shapes(config: &ModelConfig, vocab_len: usize, dim: usize) -> Vec<Vec<usize>> {
        let conv_in = dim;
        let k = config.filters_per_width;
        let mut shapes = vec![vec![vocab_len, dim]];
        for &w in &config.filter_widths {
            shapes.push(vec![k, w, conv_in]);
            shapes.push(vec![k]);
        }
        let mut feat = config.concat_len();
        if config.hidden_units > 0 {
            shapes.push(vec![config.hidden_units, feat]);
            shapes.push(vec![config.hidden_units]);
            feat = config.hidden_units;
        }
        shapes.push(vec![1, feat]);
        shapes.push(vec![1]);
        shapes
    }

    /// Rebuilds parameters from tensors in declared order, checking shapes.
    pub fn from_tensors(
        config: &ModelConfig,
        vocabulary: Vocabulary,
        tensors: Vec<Tensor>,
    ) -> Result<Self, ModelError> {
        let dim = tensors
            .first()
            .and_then(|t| t.shape().get(1).copied())
            .ok_or_else(|| ModelError::Config("missing embedding tensor".into()))?;
        let expected = Self::expected_shapes(config, vocabulary.len(), dim);
        if expected.len() != tensors.len()
            || expected.iter().zip(&tensors).any(|(e, t)| e.as_slice() != t.shape())
        {
            return Err(ModelError::Config(format!(
                "tensor shapes {:?} do not match config (expected {expected:?})",
                tensors.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()
            )));
        }
        let mut it = tensors.into_iter();
        let embedding = it.next().unwrap();
        let convs = config
            .filter_widths
            .iter()
            .map(|_| ConvLayer {
                filters: it.next().unwrap(),
                bias: it.next().unwrap(),
            })
            .collect();
        let hidden = (config.hidden_units > 0).then(|| DenseLayer {
            weights: it.next().unwrap(),
            bias: it.next().unwrap(),
        });
        let output = DenseLayer {
            weights: it.next().unwrap(),
            bias: it.next().unwrap(),
        };
        Ok(Self {
            vocabulary,
            embedding,
            convs,
            hidden,
            output,
        })
    }

    pub fn zeroed(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }
}

/// Token rows plus sentence valence for one headline.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRepresentation {
    /// Row ids, truncated and right-padded with `<pad>`.
    pub token_ids: Vec<usize>,
    /// Valence features; zeros when valence is switched off.
    pub vader: Vec<f64>,
    /// Number of real (non-pad) tokens.
    pub length: usize,
}

impl SentenceRepresentation {
    /// The compound score, or the first breakdown component.
    pub fn vader_score(&self) -> f64 {
        self.vader[0]
    }

    /// `[L × D]` matrix of the rows.
    pub fn token_matrix(&self, params: &ModelParameters) -> Tensor {
        let d = params.row_dim();
        let mut data = Vec::with_capacity(self.token_ids.len() * d);
        for &id in &self.token_ids {
            data.extend_from_slice(params.embedding.row(id));
        }
        Tensor::new(vec![self.token_ids.len(), d], data).expect("non-empty representation")
    }

    /// Appends `<pad>` rows; used to probe padding behavior.
    pub fn with_extra_padding(&self, extra: usize) -> Self {
        let mut r = self.clone();
        r.token_ids.extend(std::iter::repeat(PAD_INDEX).take(extra));
        r
    }
}

/// Leaf handles for one tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub embedding: Var,
    pub convs: Vec<(Var, Var)>,
    pub hidden: Option<(Var, Var)>,
    pub output: (Var, Var),
}

impl ParamVars {
    /// Handles in the order of [`ModelParameters::tensors`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        for &(f, b) in &self.convs {
            out.push(f);
            out.push(b);
        }
        if let Some((w, b)) = self.hidden {
            out.push(w);
            out.push(b);
        }
        out.push(self.output.0);
        out.push(self.output.1);
        out
    }
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
}

fn glorot(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("positive shape")
}

fn uniform_row(rng: &mut ChaCha8Rng, n: usize) -> impl Iterator<Item = f64> + '_ {
    (0..n).map(move |_| rng.gen_range(-RANDOM_EMBEDDING_RANGE..RANDOM_EMBEDDING_RANGE))
}

impl Model {
    /// Row widths of the two halves.
    fn halves(config: &ModelConfig, store: Option<&LexiconStore>) -> (usize, usize) {
        match store {
            Some(s) => (s.embeddings.dim(), s.affective.dim()),
            None => (config.fallback_embedding_dim, 0),
        }
    }

    /// Fresh parameters. Embedding rows come from the lexica where the config
    /// enables them and are sampled otherwise; weights use Glorot-uniform
    /// scaling, biases start at zero. Equal seeds give equal parameters.
    pub fn init(
        config: &ModelConfig,
        store: Option<&LexiconStore>,
        vocabulary: Vocabulary,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if config.needs_lexicon() && store.is_none() {
            return Err(ModelError::Config(
                "embeddings enabled but no lexicon supplied".into(),
            ));
        }
        let (d_emb, d_aff) = Self::halves(config, store);
        let dim = d_emb + d_aff;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut table = Vec::with_capacity(vocabulary.len() * dim);
        for (i, tok) in vocabulary.tokens().iter().enumerate() {
            if i == PAD_INDEX {
                table.extend(std::iter::repeat(0.0).take(dim));
                continue;
            }
            match store.filter(|_| config.pretrained_on()) {
                Some(s) => table.extend_from_slice(s.embeddings.lookup(tok)),
                None => table.extend(uniform_row(&mut rng, d_emb)),
            }
            match store.filter(|_| config.affective_on()) {
                Some(s) => match s.affective.get(tok) {
                    Some(a) => table.extend_from_slice(a),
                    None => table.extend(std::iter::repeat(0.0).take(d_aff)),
                },
                None => table.extend(uniform_row(&mut rng, d_aff)),
            }
        }
        let embedding =
            Tensor::new(vec![vocabulary.len(), dim], table).map_err(at("embedding"))?;

        let k = config.filters_per_width;
        let convs = config
            .filter_widths
            .iter()
            .map(|&w| ConvLayer {
                filters: glorot(&mut rng, vec![k, w, dim], w * dim, w * k),
                bias: Tensor::zeros(vec![k]),
            })
            .collect();
        let mut feat = config.concat_len();
        let hidden = (config.hidden_units > 0).then(|| {
            let h = config.hidden_units;
            let layer = DenseLayer {
                weights: glorot(&mut rng, vec![h, feat], feat, h),
                bias: Tensor::zeros(vec![h]),
            };
            feat = h;
            layer
        });
        let output = DenseLayer {
            weights: glorot(&mut rng, vec![1, feat], feat, 1),
            bias: Tensor::zeros(vec![1]),
        };
        Ok(Self {
            config: config.clone(),
            params: ModelParameters {
                vocabulary,
                embedding,
                convs,
                hidden,
                output,
            },
        })
    }

    /// Adds rows for unseen tokens the lexica know about, so inference sees
    /// the same values a full-vocabulary table would hold. Tokens no enabled
    /// lexicon covers keep mapping to `<oov>`.
    pub fn extend_vocabulary<'a, I>(&mut self, tokens: I, store: Option<&LexiconStore>)
    where
        I: IntoIterator<Item = &'a str>,
    {
        let Some(store) = store.filter(|_| self.config.needs_lexicon()) else {
            return;
        };
        let (d_emb, _) = Self::halves(&self.config, Some(store));
        let dim = self.params.row_dim();
        let oov = self.params.embedding.row(OOV_INDEX).to_vec();
        let mut added = Vec::new();
        for tok in tokens {
            if self.params.vocabulary.get(tok).is_some() {
                continue;
            }
            let emb = self.config.pretrained_on().then(|| store.embeddings.index_of(tok)).flatten();
            let aff = self.config.affective_on().then(|| store.affective.get(tok)).flatten();
            if emb.is_none() && aff.is_none() {
                continue;
            }
            let mut row = Vec::with_capacity(dim);
            match emb {
                Some(i) => row.extend_from_slice(store.embeddings.row(i)),
                None => row.extend_from_slice(&oov[..d_emb]),
            }
            match aff {
                Some(a) => row.extend_from_slice(a),
                None if self.config.affective_on() => {
                    row.extend(std::iter::repeat(0.0).take(dim - d_emb))
                }
                None => row.extend_from_slice(&oov[d_emb..]),
            }
            self.params.vocabulary.insert(tok);
            added.extend(row);
        }
        if added.is_empty() {
            return;
        }
        let mut data = std::mem::replace(&mut self.params.embedding, Tensor::scalar(0.0)).into_data();
        data.extend(added);
        self.params.embedding =
            Tensor::new(vec![self.params.vocabulary.len(), dim], data).expect("consistent rows");
    }

    /// Token rows (truncated, padded to the widest filter) and valence.
    pub fn represent(&self, tokens: &TokenSequence, scorer: &ValenceScorer) -> SentenceRepresentation {
        let cfg = &self.config;
        let mut ids: Vec<usize> = tokens
            .iter()
            .take(cfg.max_sequence_length)
            .map(|t| self.params.vocabulary.id(t))
            .collect();
        let length = ids.len();
        let min_rows = cfg.max_width().saturating_sub(match cfg.vader_placement {
            VaderPlacement::Prepended if cfg.use_vader => 1,
            _ => 0,
        });
        while ids.len() < min_rows.max(1) {
            ids.push(PAD_INDEX);
        }
        let width = cfg.vader_features.width();
        let vader = if cfg.use_vader {
            match cfg.vader_features {
                VaderFeatures::Compound => vec![scorer.score(tokens)],
                VaderFeatures::Breakdown => {
                    let b = scorer.breakdown(tokens);
                    vec![b.positive, b.negative, b.neutral]
                }
            }
        } else {
            vec![0.0; width]
        };
        SentenceRepresentation {
            token_ids: ids,
            vader,
            length,
        }
    }

    /// Puts every parameter on the tape as a leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let p = &self.params;
        ParamVars {
            embedding: tape.leaf(p.embedding.clone()),
            convs: p
                .convs
                .iter()
                .map(|c| (tape.leaf(c.filters.clone()), tape.leaf(c.bias.clone())))
                .collect(),
            hidden: p
                .hidden
                .as_ref()
                .map(|h| (tape.leaf(h.weights.clone()), tape.leaf(h.bias.clone()))),
            output: (
                tape.leaf(p.output.weights.clone()),
                tape.leaf(p.output.bias.clone()),
            ),
        }
    }

    /// Records one forward pass and returns the `[1]`-shaped output node.
    pub fn forward_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        repr: &SentenceRepresentation,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        let rate = cfg.dropout_rate;
        let mut x = tape
            .gather(vars.embedding, &repr.token_ids)
            .map_err(at("embedding"))?;
        if cfg.use_vader && cfg.vader_placement == VaderPlacement::Prepended {
            let d = self.params.row_dim();
            let mut row = vec![0.0; d];
            for (dst, v) in row.iter_mut().zip(&repr.vader) {
                *dst = *v;
            }
            let row = tape.leaf(Tensor::new(vec![1, d], row).map_err(at("vader row"))?);
            x = tape.vstack(&[row, x]).map_err(at("vader row"))?;
        }
        if cfg.dropout_site == DropoutSite::Embeddings {
            x = tape.dropout(x, rate, training, rng).map_err(at("dropout"))?;
        }

        let mut parts = Vec::with_capacity(vars.convs.len() + 1);
        for (&(f, b), width) in vars.convs.iter().zip(&cfg.filter_widths) {
            let name = format!("conv{width}");
            let c = tape.conv1d_valid(x, f, b).map_err(at(name.clone()))?;
            let r = tape.relu(c);
            parts.push(tape.global_max_pool(r).map_err(at(name))?);
        }
        if cfg.use_vader && cfg.vader_placement == VaderPlacement::AfterPooling {
            parts.push(tape.leaf(Tensor::vector(repr.vader.clone())));
        }
        let mut h = tape.concat(&parts).map_err(at("concat"))?;
        if cfg.dropout_site == DropoutSite::Concat {
            h = tape.dropout(h, rate, training, rng).map_err(at("dropout"))?;
        }
        if let Some((w, b)) = vars.hidden {
            let z = tape.dense(h, w, b).map_err(at("hidden"))?;
            h = tape.relu(z);
            if cfg.dropout_site == DropoutSite::Hidden {
                h = tape.dropout(h, rate, training, rng).map_err(at("dropout"))?;
            }
        }
        let (w, b) = vars.output;
        let z = tape.dense(h, w, b).map_err(at("output"))?;
        Ok(tape.tanh(z))
    }

    /// Scalar prediction in (−1, 1).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        repr: &SentenceRepresentation,
        training: bool,
        rng: &mut R,
    ) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let vars = self.register_for_inference(&mut tape, repr);
        let out = self.forward_on_tape(&mut tape, &vars.0, &vars.1, training, rng)?;
        Ok(tape.value(out).item())
    }

    /// Inference without copying the whole embedding table: only the rows the
    /// sentence uses go on the tape, renumbered.
    fn register_for_inference(
        &self,
        tape: &mut Tape,
        repr: &SentenceRepresentation,
    ) -> (ParamVars, SentenceRepresentation) {
        let d = self.params.row_dim();
        let mut data = Vec::with_capacity(repr.token_ids.len() * d);
        for &id in &repr.token_ids {
            data.extend_from_slice(self.params.embedding.row(id));
        }
        let local = SentenceRepresentation {
            token_ids: (0..repr.token_ids.len()).collect(),
            ..repr.clone()
        };
        let p = &self.params;
        let vars = ParamVars {
            embedding: tape.leaf(Tensor::new(vec![repr.token_ids.len(), d], data).expect("rows")),
            convs: p
                .convs
                .iter()
                .map(|c| (tape.leaf(c.filters.clone()), tape.leaf(c.bias.clone())))
                .collect(),
            hidden: p
                .hidden
                .as_ref()
                .map(|h| (tape.leaf(h.weights.clone()), tape.leaf(h.bias.clone()))),
            output: (
                tape.leaf(p.output.weights.clone()),
                tape.leaf(p.output.bias.clone()),
            ),
        };
        (vars, local)
    }

    /// Inference-mode prediction for a token sequence.
    pub fn predict_tokens(&self, tokens: &TokenSequence, scorer: &ValenceScorer) -> Result<f64, ModelError> {
        let repr = self.represent(tokens, scorer);
        // inference never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(&repr, false, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{AffectiveLexicon, EmbeddingTable, ValenceLexicon};
    use crate::text::{preprocess, RawInstance, COMPANY};

    fn store() -> LexiconStore {
        let emb = EmbeddingTable::parse(
            "growth 0.1 0.2 0.3 0.4\nsales 0.5 0.1 0.0 0.2\nquarter -0.1 0.3 0.2 0.1\n<company> 0.9 0.9 0.9 0.9\n",
            "e",
        )
        .unwrap();
        let aff = AffectiveLexicon::parse("tok\thappy\tsad\ngrowth\t0.7\t0.1\n", "a").unwrap();
        LexiconStore::new(emb, aff)
    }

    fn scorer() -> ValenceScorer {
        ValenceScorer::with_defaults(ValenceLexicon::from_pairs([("growth", 1.5)]))
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            filters_per_width: 3,
            ..ModelConfig::default()
        }
    }

    fn sample() -> TokenSequence {
        preprocess(
            &RawInstance::new(
                "Morrisons book second consecutive quarter of sales growth",
                "Morrisons",
                Some(0.43),
            ),
            true,
        )
    }

    fn model(cfg: &ModelConfig, seed: u64) -> Model {
        let seq = sample();
        Model::init(cfg, Some(&store()), Vocabulary::build(seq.iter()), seed).unwrap()
    }

    #[test]
    fn short_sentence_is_padded() {
        let m = model(&small_config(), 1);
        let r = m.represent(&crate::text::tokenize("growth"), &scorer());
        assert_eq!(r.token_ids.len(), 4);
        assert_eq!(r.length, 1);
        assert_eq!(&r.token_ids[1..], &[PAD_INDEX; 3]);
    }

    #[test]
    fn long_sentence_is_truncated() {
        let cfg = ModelConfig {
            max_sequence_length: 5,
            ..small_config()
        };
        let m = model(&cfg, 1);
        let r = m.represent(&sample(), &scorer());
        assert_eq!(r.token_ids.len(), 5);
        assert_eq!(r.length, 5);
    }

    #[test]
    fn sample_starts_with_company_row() {
        let m = model(&small_config(), 1);
        let r = m.represent(&sample(), &scorer());
        let mat = r.token_matrix(&m.params);
        assert_eq!(r.token_ids[0], m.params.vocabulary.id(COMPANY));
        assert_eq!(&mat.row(0)[..4], &[0.9, 0.9, 0.9, 0.9]);
        assert_eq!(&mat.row(0)[4..], &[0.0, 0.0]);
        assert!(r.vader_score() > 0.0);
    }

    #[test]
    fn vader_off_zeroes_slot() {
        let cfg = ModelConfig {
            use_vader: false,
            ..small_config()
        };
        let m = model(&cfg, 1);
        let r = m.represent(&sample(), &scorer());
        assert_eq!(r.vader, vec![0.0]);
        assert_eq!(cfg.concat_len(), 9);
        assert_eq!(small_config().concat_len(), 10);
    }

    #[test]
    fn init_is_deterministic_and_pad_is_zero() {
        let a = model(&small_config(), 7);
        let b = model(&small_config(), 7);
        assert_eq!(a, b);
        assert_ne!(a.params.convs[0], model(&small_config(), 8).params.convs[0]);
        assert!(a.params.embedding.row(PAD_INDEX).iter().all(|&v| v == 0.0));
        let growth = a.params.vocabulary.id("growth");
        assert_eq!(a.params.embedding.row(growth), &[0.1, 0.2, 0.3, 0.4, 0.7, 0.1]);
        assert!(a.params.output.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_embedding_ablation_ignores_lexicon_rows() {
        let cfg = ModelConfig {
            use_embeddings: false,
            ..small_config()
        };
        let m = model(&cfg, 7);
        let growth = m.params.vocabulary.id("growth");
        assert_ne!(m.params.embedding.row(growth), &[0.1, 0.2, 0.3, 0.4, 0.7, 0.1]);
        assert!(m.params.embedding.row(PAD_INDEX).iter().all(|&v| v == 0.0));
        assert!(m.params.embedding.row(growth).iter().all(|v| v.abs() < RANDOM_EMBEDDING_RANGE));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = model(&small_config(), 3);
        m.params = m.params.zeroed();
        let r = m.represent(&sample(), &scorer());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.forward(&r, false, &mut rng).unwrap(), 0.0);
        assert_eq!(m.forward(&r, true, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn inference_is_bit_identical() {
        let m = model(&small_config(), 3);
        let r = m.represent(&sample(), &scorer());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = m.forward(&r, false, &mut rng).unwrap();
        let b = m.forward(&r, false, &mut rng).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > -1.0 && a < 1.0);
    }

    #[test]
    fn tape_forward_matches_inference_forward() {
        let m = model(&small_config(), 3);
        let r = m.represent(&sample(), &scorer());
        let mut tape = Tape::new();
        let vars = m.register(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = m.forward_on_tape(&mut tape, &vars, &r, false, &mut rng).unwrap();
        assert_eq!(tape.value(out).item(), m.forward(&r, false, &mut rng).unwrap());
    }

    #[test]
    fn extend_vocabulary_uses_lexicon_rows() {
        let mut m = model(&small_config(), 3);
        let before = m.params.vocabulary.len();
        m.extend_vocabulary(["growth", "unheard", "quarter"], Some(&store()));
        assert_eq!(m.params.vocabulary.len(), before);
        let seq = crate::text::tokenize("sales");
        let fresh = Model::init(&small_config(), Some(&store()), Vocabulary::build(seq.iter()), 3).unwrap();
        let mut m2 = model(&small_config(), 3);
        m2.extend_vocabulary(["sales"], Some(&store()));
        let id = m2.params.vocabulary.id("sales");
        let fid = fresh.params.vocabulary.id("sales");
        assert_eq!(m2.params.embedding.row(id), fresh.params.embedding.row(fid));
        assert_eq!(m2.params.vocabulary.id("unheard"), OOV_INDEX);
    }

    #[test]
    fn prepended_vader_and_breakdown_run() {
        for cfg in [
            ModelConfig {
                vader_placement: VaderPlacement::Prepended,
                ..small_config()
            },
            ModelConfig {
                vader_features: VaderFeatures::Breakdown,
                hidden_units: 5,
                dropout_site: DropoutSite::Hidden,
                ..small_config()
            },
        ] {
            let m = model(&cfg, 2);
            let r = m.represent(&sample(), &scorer());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let v = m.forward(&r, true, &mut rng).unwrap();
            assert!(v.abs() < 1.0);
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            ModelConfig { filter_widths: vec![], ..ModelConfig::default() },
            ModelConfig { dropout_rate: 1.0, ..ModelConfig::default() },
            ModelConfig { max_sequence_length: 3, ..ModelConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        let needs = ModelConfig::default();
        assert!(Model::init(&needs, None, Vocabulary::default(), 0).is_err());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let m = model(&small_config(), 2);
        let ts: Vec<Tensor> = m.params.tensors().into_iter().cloned().collect();
        let back = ModelParameters::from_tensors(&m.config, m.params.vocabulary.clone(), ts.clone()).unwrap();
        assert_eq!(back, m.params);
        let mut short = ts;
        short.pop();
        assert!(ModelParameters::from_tensors(&m.config, m.params.vocabulary.clone(), short).is_err());
    }
}
