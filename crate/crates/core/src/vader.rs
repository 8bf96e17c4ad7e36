//! Rule-based sentence valence in the style of VADER: a valence lexicon plus
//! degree modifiers, capitalization, negation, contrastive "but" and
//! exclamation heuristics, normalized into [-1, 1].

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::lexicon::ValenceLexicon;
use crate::text::TokenSequence;

const DEFAULTS: &str = include_str!("../data/vader_defaults.txt");
const NEGATORS: &str = include_str!("../data/negators.txt");
const BOOSTERS: &str = include_str!("../data/boosters.txt");

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid rule config: {0}")]
    Invalid(String),
}

/// Constants and switches of the heuristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub negation_window: usize,
    pub negation_factor: f64,
    pub booster_window: usize,
    pub booster_increment: f64,
    /// Booster effect shrinks by this fraction per extra token of distance.
    pub booster_distance_decay: f64,
    pub caps_increment: f64,
    pub exclamation_increment_per_mark: f64,
    pub exclamation_cap: usize,
    pub but_weight_before: f64,
    pub but_weight_after: f64,
    pub normalization_alpha: f64,
    pub enable_boosters: bool,
    pub enable_caps: bool,
    pub enable_negation: bool,
    pub enable_but: bool,
    pub enable_exclamation: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self::parse(DEFAULTS).expect("bundled defaults parse")
    }
}

/// The bundled default constants.
pub fn default_config() -> RuleConfig {
    RuleConfig::default()
}

impl RuleConfig {
    /// Parses `key=value` lines; `#` starts a comment. Every key must be set.
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut map = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| RuleError::Parse {
                line: n + 1,
                reason: format!("expected key=value, got {line:?}"),
            })?;
            map.insert(k.trim().to_string(), (n + 1, v.trim().to_string()));
        }
        fn take<T: std::str::FromStr>(
            map: &mut HashMap<String, (usize, String)>,
            key: &str,
        ) -> Result<T, RuleError> {
            let (line, v) = map.remove(key).ok_or_else(|| RuleError::Parse {
                line: 0,
                reason: format!("missing key {key}"),
            })?;
            v.parse().map_err(|_| RuleError::Parse {
                line,
                reason: format!("bad value for {key}: {v:?}"),
            })
        }
        let cfg = RuleConfig {
            negation_window: take(&mut map, "negation_window")?,
            negation_factor: take(&mut map, "negation_factor")?,
            booster_window: take(&mut map, "booster_window")?,
            booster_increment: take(&mut map, "booster_increment")?,
            booster_distance_decay: take(&mut map, "booster_distance_decay")?,
            caps_increment: take(&mut map, "caps_increment")?,
            exclamation_increment_per_mark: take(&mut map, "exclamation_increment_per_mark")?,
            exclamation_cap: take(&mut map, "exclamation_cap")?,
            but_weight_before: take(&mut map, "but_weight_before")?,
            but_weight_after: take(&mut map, "but_weight_after")?,
            normalization_alpha: take(&mut map, "normalization_alpha")?,
            enable_boosters: take(&mut map, "enable_boosters")?,
            enable_caps: take(&mut map, "enable_caps")?,
            enable_negation: take(&mut map, "enable_negation")?,
            enable_but: take(&mut map, "enable_but")?,
            enable_exclamation: take(&mut map, "enable_exclamation")?,
        };
        if let Some((k, (line, _))) = map.into_iter().next() {
            return Err(RuleError::Parse {
                line,
                reason: format!("unknown key {k}"),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Serializes back to the `key=value` format.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "negation_window={}", self.negation_window);
        let _ = writeln!(s, "negation_factor={}", self.negation_factor);
        let _ = writeln!(s, "booster_window={}", self.booster_window);
        let _ = writeln!(s, "booster_increment={}", self.booster_increment);
        let _ = writeln!(s, "booster_distance_decay={}", self.booster_distance_decay);
        let _ = writeln!(s, "caps_increment={}", self.caps_increment);
        let _ = writeln!(s, "exclamation_increment_per_mark={}", self.exclamation_increment_per_mark);
        let _ = writeln!(s, "exclamation_cap={}", self.exclamation_cap);
        let _ = writeln!(s, "but_weight_before={}", self.but_weight_before);
        let _ = writeln!(s, "but_weight_after={}", self.but_weight_after);
        let _ = writeln!(s, "normalization_alpha={}", self.normalization_alpha);
        let _ = writeln!(s, "enable_boosters={}", self.enable_boosters);
        let _ = writeln!(s, "enable_caps={}", self.enable_caps);
        let _ = writeln!(s, "enable_negation={}", self.enable_negation);
        let _ = writeln!(s, "enable_but={}", self.enable_but);
        let _ = writeln!(s, "enable_exclamation={}", self.enable_exclamation);
        s
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if self.negation_window < 1 {
            return Err(RuleError::Invalid("negation_window must be >= 1".into()));
        }
        if !(self.normalization_alpha > 0.0) {
            return Err(RuleError::Invalid("normalization_alpha must be > 0".into()));
        }
        let reals = [
            self.negation_factor,
            self.booster_increment,
            self.booster_distance_decay,
            self.caps_increment,
            self.exclamation_increment_per_mark,
            self.but_weight_before,
            self.but_weight_after,
            self.normalization_alpha,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return Err(RuleError::Invalid("non-finite constant".into()));
        }
        Ok(())
    }

    /// All five heuristics switched off.
    pub fn lexicon_only(&self) -> Self {
        Self {
            enable_boosters: false,
            enable_caps: false,
            enable_negation: false,
            enable_but: false,
            enable_exclamation: false,
            ..self.clone()
        }
    }
}

/// Negator and degree-modifier word lists.
#[derive(Debug, Clone, PartialEq)]
pub struct WordLists {
    pub negators: HashSet<String>,
    /// Degree modifier → signed increment (negative for dampeners).
    pub boosters: HashMap<String, f64>,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

impl WordLists {
    pub fn parse(negators: &str, boosters: &str, default_increment: f64) -> Result<Self, RuleError> {
        let negators = data_lines(negators).map(|(_, l)| l.trim().to_lowercase()).collect();
        let mut map = HashMap::new();
        for (line, l) in data_lines(boosters) {
            let mut fields = l.split('\t');
            let tok = fields.next().unwrap_or_default().trim().to_lowercase();
            let inc = match fields.next().map(str::trim).filter(|s| !s.is_empty()) {
                Some(v) => v.parse().map_err(|_| RuleError::Parse {
                    line,
                    reason: format!("bad increment {v:?}"),
                })?,
                None => default_increment,
            };
            map.insert(tok, inc);
        }
        Ok(Self {
            negators,
            boosters: map,
        })
    }

    pub fn bundled(default_increment: f64) -> Self {
        Self::parse(NEGATORS, BOOSTERS, default_increment).expect("bundled lists parse")
    }

    pub fn load(negators: &Path, boosters: &Path, default_increment: f64) -> Result<Self, RuleError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| RuleError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        Self::parse(&read(negators)?, &read(boosters)?, default_increment)
    }

    pub fn empty() -> Self {
        Self {
            negators: HashSet::new(),
            boosters: HashMap::new(),
        }
    }
}

/// Positive, negative and neutral proportions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Breakdown {
    pub positive: f64,
    pub negative: f64,
    pub neutral: f64,
}

/// Per-token adjusted valences before summation.
fn adjusted_valences(
    tokens: &[String],
    case_mask: Option<&[bool]>,
    lexicon: &ValenceLexicon,
    lists: &WordLists,
    cfg: &RuleConfig,
) -> Vec<f64> {
    let n = tokens.len();
    let shouting = case_mask.filter(|m| m.len() == n && cfg.enable_caps).and_then(|mask| {
        let mut lettered = 0;
        let mut upper = 0;
        for (t, &u) in tokens.iter().zip(mask) {
            if t.chars().any(char::is_alphabetic) {
                lettered += 1;
                upper += usize::from(u);
            }
        }
        // only a mix of shouted and normal words signals emphasis
        (upper > 0 && upper < lettered).then_some(mask)
    });

    let mut out = vec![0.0; n];
    for i in 0..n {
        let tok = tokens[i].as_str();
        if lists.boosters.contains_key(tok) {
            continue;
        }
        let Some(base) = lexicon.get(tok) else {
            continue;
        };
        let sign = if base < 0.0 { -1.0 } else { 1.0 };
        let mut v = base;

        if cfg.enable_boosters {
            for dist in 1..=cfg.booster_window.min(i) {
                let prev = tokens[i - dist].as_str();
                if let Some(&inc) = lists.boosters.get(prev) {
                    let mut scalar = sign * inc;
                    if shouting.is_some_and(|m| m[i - dist]) {
                        scalar += sign * cfg.caps_increment;
                    }
                    scalar *= 1.0 - cfg.booster_distance_decay * (dist - 1) as f64;
                    v += scalar;
                }
            }
        }

        if shouting.is_some_and(|m| m[i]) {
            v += sign * cfg.caps_increment;
        }

        if cfg.enable_negation {
            let from = i.saturating_sub(cfg.negation_window);
            if tokens[from..i].iter().any(|t| lists.negators.contains(t.as_str())) {
                v *= cfg.negation_factor;
            }
        }
        out[i] = v;
    }

    if cfg.enable_but {
        if let Some(b) = tokens.iter().position(|t| t == "but") {
            for (i, v) in out.iter_mut().enumerate() {
                if i < b {
                    *v *= cfg.but_weight_before;
                } else if i > b {
                    *v *= cfg.but_weight_after;
                }
            }
        }
    }
    out
}

fn exclamation_amplifier(tokens: &[String], cfg: &RuleConfig) -> f64 {
    if !cfg.enable_exclamation {
        return 0.0;
    }
    let marks = tokens.iter().filter(|t| *t == "!").count();
    marks.min(cfg.exclamation_cap) as f64 * cfg.exclamation_increment_per_mark
}

/// Normalized score of a raw valence sum.
pub fn normalize(sum: f64, alpha: f64) -> f64 {
    if sum == 0.0 {
        return 0.0;
    }
    (sum / (sum * sum + alpha).sqrt()).clamp(-1.0, 1.0)
}

/// Raw summed valence, exclamation emphasis included.
pub fn raw_score(
    tokens: &[String],
    case_mask: Option<&[bool]>,
    lexicon: &ValenceLexicon,
    lists: &WordLists,
    cfg: &RuleConfig,
) -> f64 {
    let mut sum: f64 = adjusted_valences(tokens, case_mask, lexicon, lists, cfg)
        .iter()
        .sum();
    let amp = exclamation_amplifier(tokens, cfg);
    if sum > 0.0 {
        sum += amp;
    } else if sum < 0.0 {
        sum -= amp;
    }
    sum
}

/// Compound score in [-1, 1]. The caps rule needs `case_mask`; without it
/// capitalization is ignored.
pub fn score_tokens(
    tokens: &[String],
    case_mask: Option<&[bool]>,
    lexicon: &ValenceLexicon,
    lists: &WordLists,
    cfg: &RuleConfig,
) -> f64 {
    normalize(
        raw_score(tokens, case_mask, lexicon, lists, cfg),
        cfg.normalization_alpha,
    )
}

/// Proportions of positive, negative and neutral mass.
pub fn breakdown_tokens(
    tokens: &[String],
    case_mask: Option<&[bool]>,
    lexicon: &ValenceLexicon,
    lists: &WordLists,
    cfg: &RuleConfig,
) -> Breakdown {
    let vals = adjusted_valences(tokens, case_mask, lexicon, lists, cfg);
    let (mut pos, mut neg, mut neu) = (0.0, 0.0, 0.0);
    for &v in &vals {
        if v > 0.0 {
            pos += v + 1.0;
        } else if v < 0.0 {
            neg += v - 1.0;
        } else {
            neu += 1.0;
        }
    }
    let amp = exclamation_amplifier(tokens, cfg);
    if pos > -neg {
        pos += amp;
    } else if pos < -neg {
        neg -= amp;
    }
    let total = pos - neg + neu;
    if total == 0.0 {
        return Breakdown::default();
    }
    Breakdown {
        positive: pos / total,
        negative: -neg / total,
        neutral: neu / total,
    }
}

/// Lexicon, rules and word lists bundled for repeated scoring.
#[derive(Debug, Clone)]
pub struct ValenceScorer {
    pub lexicon: ValenceLexicon,
    pub lists: WordLists,
    pub config: RuleConfig,
}

impl ValenceScorer {
    pub fn new(lexicon: ValenceLexicon, lists: WordLists, config: RuleConfig) -> Self {
        Self {
            lexicon,
            lists,
            config,
        }
    }

    /// Scorer with the bundled rule constants and word lists.
    pub fn with_defaults(lexicon: ValenceLexicon) -> Self {
        let config = RuleConfig::default();
        let lists = WordLists::bundled(config.booster_increment);
        Self::new(lexicon, lists, config)
    }

    pub fn score(&self, seq: &TokenSequence) -> f64 {
        score_sentence(seq, &self.lexicon, &self.lists, &self.config)
    }

    pub fn breakdown(&self, seq: &TokenSequence) -> Breakdown {
        breakdown_tokens(
            &seq.tokens,
            Some(&seq.upper_case),
            &self.lexicon,
            &self.lists,
            &self.config,
        )
    }
}

/// Compound score of a token sequence, using its case mask.
pub fn score_sentence(
    seq: &TokenSequence,
    lexicon: &ValenceLexicon,
    lists: &WordLists,
    cfg: &RuleConfig,
) -> f64 {
    score_tokens(&seq.tokens, Some(&seq.upper_case), lexicon, lists, cfg)
}
