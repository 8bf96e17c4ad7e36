//! A second, deliberately plain implementation of the valence rules, written
//! as a per-token trace over whitespace-separated words.

use std::collections::HashMap;

pub const BOOSTER_STEP: f64 = 0.293;
pub const CAPS_STEP: f64 = 0.733;
pub const NEGATION_SCALAR: f64 = -0.74;
pub const NEGATION_REACH: usize = 3;
pub const BOOSTER_REACH: usize = 3;
pub const DISTANCE_SCALE: [f64; 3] = [1.0, 0.95, 0.9];
pub const EXCLAIM_STEP: f64 = 0.292;
pub const EXCLAIM_MAX: usize = 4;
pub const BEFORE_BUT: f64 = 0.5;
pub const AFTER_BUT: f64 = 1.5;
pub const ALPHA: f64 = 15.0;

#[derive(Clone, Copy, Default)]
pub struct Rules {
    pub boosters: bool,
    pub caps: bool,
    pub negation: bool,
    pub but: bool,
    pub exclamation: bool,
}

pub struct Mini {
    pub valence: HashMap<&'static str, f64>,
    pub negators: Vec<&'static str>,
    pub boosters: HashMap<&'static str, f64>,
}

impl Mini {
    pub fn new() -> Self {
        Self {
            valence: [("good", 1.9), ("bad", -2.5), ("great", 3.1), ("loss", -1.4), ("gain", 1.2)]
                .into_iter()
                .collect(),
            negators: vec!["not", "never", "no"],
            boosters: [("very", BOOSTER_STEP), ("much", BOOSTER_STEP), ("slightly", -BOOSTER_STEP)]
                .into_iter()
                .collect(),
        }
    }
}

struct Word {
    lower: String,
    shouted: bool,
    lettered: bool,
}

pub fn trace(text: &str, rules: Rules, mini: &Mini) -> f64 {
    let words: Vec<Word> = text
        .split_whitespace()
        .map(|w| {
            let lettered = w.chars().any(char::is_alphabetic);
            Word {
                lower: w.to_lowercase(),
                shouted: lettered && w.to_uppercase() == w,
                lettered,
            }
        })
        .collect();
    let n_lettered = words.iter().filter(|w| w.lettered).count();
    let n_shouted = words.iter().filter(|w| w.shouted).count();
    let emphasis = rules.caps && n_shouted > 0 && n_shouted < n_lettered;

    let mut adjusted = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let word = w.lower.as_str();
        let base = match mini.valence.get(word) {
            Some(&b) if !mini.boosters.contains_key(word) => b,
            _ => {
                adjusted.push(0.0);
                continue;
            }
        };
        let sign = if base < 0.0 { -1.0 } else { 1.0 };
        let mut v = base;
        if rules.boosters {
            for d in 1..=BOOSTER_REACH {
                if d > i {
                    break;
                }
                let prev = &words[i - d];
                if let Some(&step) = mini.boosters.get(prev.lower.as_str()) {
                    let mut add = sign * step;
                    if emphasis && prev.shouted {
                        add += sign * CAPS_STEP;
                    }
                    add *= DISTANCE_SCALE[d - 1];
                    v += add;
                }
            }
        }
        if emphasis && w.shouted {
            v += sign * CAPS_STEP;
        }
        if rules.negation {
            let start = i.saturating_sub(NEGATION_REACH);
            if words[start..i].iter().any(|p| mini.negators.contains(&p.lower.as_str())) {
                v *= NEGATION_SCALAR;
            }
        }
        adjusted.push(v);
    }

    if rules.but {
        if let Some(pivot) = words.iter().position(|w| w.lower == "but") {
            for (i, v) in adjusted.iter_mut().enumerate() {
                if i < pivot {
                    *v *= BEFORE_BUT;
                }
                if i > pivot {
                    *v *= AFTER_BUT;
                }
            }
        }
    }

    let mut total = 0.0;
    for v in &adjusted {
        total += v;
    }
    if rules.exclamation && total != 0.0 {
        let marks = words.iter().filter(|w| w.lower == "!").count().min(EXCLAIM_MAX);
        let push = marks as f64 * EXCLAIM_STEP;
        total += if total > 0.0 { push } else { -push };
    }
    if total == 0.0 {
        0.0
    } else {
        total / (total * total + ALPHA).sqrt()
    }
}
