//! Headline preprocessing: target-company masking, number masking and
//! punctuation-aware tokenization.
//!
//! All functions here are pure and can be called from any thread.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Sentinel replacing the target company.
pub const COMPANY: &str = "<company>";
/// Sentinel replacing numeric literals.
pub const NUMBER: &str = "<number>";

const SENTINELS: [&str; 2] = [COMPANY, NUMBER];

/// One annotated (or unlabeled) headline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInstance {
    pub headline: String,
    pub company: String,
    pub score: Option<f64>,
}

impl RawInstance {
    pub fn new(headline: impl Into<String>, company: impl Into<String>, score: Option<f64>) -> Self {
        Self {
            headline: headline.into(),
            company: company.into(),
            score,
        }
    }

    /// Checks the record invariants: non-empty fields and a score in [-1, 1].
    pub fn validate(&self) -> Result<(), String> {
        if self.headline.trim().is_empty() {
            return Err("empty headline".into());
        }
        if self.company.trim().is_empty() {
            return Err("empty company".into());
        }
        if let Some(s) = self.score {
            if !s.is_finite() || !(-1.0..=1.0).contains(&s) {
                return Err(format!("score {s} outside [-1, 1]"));
            }
        }
        Ok(())
    }
}

/// Tokens of one headline.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    /// `true` when the company mask was emitted for this headline.
    pub masked_company: bool,
    /// Parallel to `tokens`: the token was written entirely in upper case
    /// before lowercasing. Only tokens carrying at least one cased letter
    /// can be `true`.
    pub upper_case: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[0-9]+(?:[.,][0-9]+)*").unwrap())
}

fn punctuation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\p{P}$").unwrap())
}

/// ASCII punctuation (which includes symbols such as `$`, `%`, `<`) and
/// every character in a Unicode punctuation category.
pub fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    let mut buf = [0u8; 4];
    punctuation_re().is_match(c.encode_utf8(&mut buf))
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits `text` into alternating plain and sentinel segments so that
/// replacements never touch text that has already been masked.
fn segments(text: &str) -> Vec<(&str, bool)> {
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let next = SENTINELS
            .iter()
            .filter_map(|s| rest.find(s).map(|i| (i, s.len())))
            .min_by_key(|&(i, _)| i);
        match next {
            Some((i, len)) => {
                if i > 0 {
                    out.push((&rest[..i], false));
                }
                out.push((&rest[i..i + len], true));
                rest = &rest[i + len..];
            }
            None => {
                if !rest.is_empty() {
                    out.push((rest, false));
                }
                return out;
            }
        }
    }
}

fn company_pattern(company: &str) -> Option<Regex> {
    let words: Vec<&str> = company.split_whitespace().collect();
    if words.is_empty() {
        return None;
    }
    // Internal whitespace in a multi-word name matches any whitespace run.
    let body = words
        .iter()
        .map(|w| regex::escape(w))
        .collect::<Vec<_>>()
        .join(r"\s+");
    Some(Regex::new(&format!("(?i){body}")).expect("escaped pattern"))
}

fn sentinel_spans(text: &str) -> Vec<(usize, usize)> {
    let mut offset = 0;
    segments(text)
        .into_iter()
        .filter_map(|(seg, sentinel)| {
            let span = (offset, offset + seg.len());
            offset += seg.len();
            sentinel.then_some(span)
        })
        .collect()
}

fn mask_company(text: &str, re: &Regex) -> (String, usize) {
    let spans = sentinel_spans(text);
    // a sentinel stands in for a word, so its edges block a match just like
    // letters or digits would
    let blocks = |c: Option<char>, at: usize, before: bool| -> bool {
        let touches = spans
            .iter()
            .any(|&(s, e)| if before { e == at } else { s == at });
        touches || c.is_some_and(is_word_char)
    };
    let mut out = String::with_capacity(text.len());
    let mut count = 0;
    let mut copied = 0;
    let mut search = 0;
    while search <= text.len() {
        let Some(m) = re.find_at(text, search) else {
            break;
        };
        let overlaps = spans.iter().any(|&(s, e)| m.start() < e && s < m.end());
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        if !overlaps
            && !m.as_str().is_empty()
            && !blocks(before, m.start(), true)
            && !blocks(after, m.end(), false)
        {
            out.push_str(&text[copied..m.start()]);
            out.push_str(COMPANY);
            copied = m.end();
            search = m.end();
            count += 1;
        } else {
            // retry one character later; a rejected match may hide a valid
            // overlapping one
            let step = text[m.start()..].chars().next().map_or(1, char::len_utf8);
            search = m.start() + step;
        }
    }
    out.push_str(&text[copied..]);
    (out, count)
}

/// Replaces the target company and all numbers, reporting how many company
/// occurrences were masked.
pub fn mask_counted(headline: &str, company: &str) -> (String, usize) {
    let (company_masked, count) = match company_pattern(company) {
        Some(re) => mask_company(headline, &re),
        None => (headline.to_string(), 0),
    };

    let mut out = String::with_capacity(company_masked.len());
    for (seg, sentinel) in segments(&company_masked) {
        if sentinel {
            out.push_str(seg);
        } else {
            out.push_str(&number_re().replace_all(seg, NUMBER));
        }
    }
    (out, count)
}

/// Masks every word-boundary, case-insensitive occurrence of `company` with
/// `<company>` and every number with `<number>`.
pub fn mask(headline: &str, company: &str) -> String {
    mask_counted(headline, company).0
}

fn push_token(tokens: &mut Vec<String>, upper: &mut Vec<bool>, raw: &str) {
    if SENTINELS.contains(&raw) {
        tokens.push(raw.to_string());
        upper.push(false);
        return;
    }
    let has_cased = raw.chars().any(|c| c.is_lowercase() || c.is_uppercase());
    let all_upper = has_cased && !raw.chars().any(char::is_lowercase);
    tokens.push(raw.to_lowercase());
    upper.push(all_upper);
}

/// Whitespace split, then every punctuation character becomes its own token.
/// Sentinels are kept whole; everything else is lowercased.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut upper = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word_start: Option<usize> = None;
        let mut i = 0;
        while i < chunk.len() {
            let rest = &chunk[i..];
            if let Some(s) = SENTINELS.iter().find(|s| rest.starts_with(*s)) {
                if let Some(ws) = word_start.take() {
                    push_token(&mut tokens, &mut upper, &chunk[ws..i]);
                }
                push_token(&mut tokens, &mut upper, s);
                i += s.len();
                continue;
            }
            let c = rest.chars().next().expect("non-empty");
            if is_punctuation(c) {
                if let Some(ws) = word_start.take() {
                    push_token(&mut tokens, &mut upper, &chunk[ws..i]);
                }
                push_token(&mut tokens, &mut upper, &rest[..c.len_utf8()]);
            } else if word_start.is_none() {
                word_start = Some(i);
            }
            i += c.len_utf8();
        }
        if let Some(ws) = word_start {
            push_token(&mut tokens, &mut upper, &chunk[ws..]);
        }
    }
    let masked_company = tokens.iter().any(|t| t == COMPANY);
    TokenSequence {
        tokens,
        masked_company,
        upper_case: upper,
    }
}

/// Masking (when `enabled`) followed by tokenization.
pub fn preprocess(instance: &RawInstance, enabled: bool) -> TokenSequence {
    if enabled {
        let (masked, count) = mask_counted(&instance.headline, &instance.company);
        if count == 0 {
            log::debug!(
                "company {:?} not found in headline {:?}",
                instance.company,
                instance.headline
            );
        }
        let mut seq = tokenize(&masked);
        seq.masked_company = count > 0;
        seq
    } else {
        let mut seq = tokenize(&instance.headline);
        seq.masked_company = false;
        seq
    }
}
