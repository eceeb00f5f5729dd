//! ChrF++ scoring.
//!
//! The variant implemented here follows the metric's reference scorer:
//! character n-grams are taken over the whitespace-stripped character
//! stream, word n-grams over whitespace tokens with one leading or
//! trailing ASCII punctuation character split off as its own token. Each
//! order contributes an F-beta score; the final value is 100 times the
//! arithmetic mean over all char and word orders. Zero-count sides fall
//! back to a 1e-16 epsilon, so an all-miss pair scores ~1e-14 rather than
//! exactly zero. Multi-reference scores take the best reference.

use std::collections::BTreeMap;

use crate::util::nfc;
use crate::{LexError, Result};

const EPS: f64 = 1e-16;
const ASCII_PUNCT: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

#[derive(Debug, Clone)]
pub struct ChrfConfig {
    pub char_ngram_max: usize,
    pub word_ngram_max: usize,
    pub beta: f64,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        ChrfConfig { char_ngram_max: 4, word_ngram_max: 1, beta: 2.0 }
    }
}

impl ChrfConfig {
    fn validate(&self) -> Result<()> {
        if self.char_ngram_max < 1 || self.word_ngram_max < 1 {
            return Err(LexError::Config(format!(
                "n-gram orders must be at least 1, got char {} word {}",
                self.char_ngram_max, self.word_ngram_max
            )));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(LexError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

fn ngram_counts<T: Ord + Clone>(items: &[T], n: usize) -> BTreeMap<Vec<T>, usize> {
    let mut counts = BTreeMap::new();
    if n == 0 || items.len() < n {
        return counts;
    }
    for w in items.windows(n) {
        *counts.entry(w.to_vec()).or_insert(0) += 1;
    }
    counts
}

/// Splits on whitespace, then peels a single leading or trailing ASCII
/// punctuation character into its own token (trailing wins when both
/// apply; one-character tokens stay whole).
fn word_tokens(s: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for w in s.split_whitespace() {
        let chars: Vec<char> = w.chars().collect();
        if chars.len() <= 1 {
            tokens.push(w.to_string());
            continue;
        }
        let first = chars[0];
        let last = chars[chars.len() - 1];
        if ASCII_PUNCT.contains(last) {
            tokens.push(chars[..chars.len() - 1].iter().collect());
            tokens.push(last.to_string());
        } else if ASCII_PUNCT.contains(first) {
            tokens.push(first.to_string());
            tokens.push(chars[1..].iter().collect());
        } else {
            tokens.push(w.to_string());
        }
    }
    tokens
}

fn f_beta_order<T: Ord + Clone>(
    hyp: &BTreeMap<Vec<T>, usize>,
    rf: &BTreeMap<Vec<T>, usize>,
    beta: f64,
) -> f64 {
    let n_hyp: usize = hyp.values().sum();
    let n_ref: usize = rf.values().sum();
    let n_match: usize = hyp
        .iter()
        .map(|(g, c)| c.min(rf.get(g).unwrap_or(&0)))
        .sum();
    let prec = if n_hyp > 0 { n_match as f64 / n_hyp as f64 } else { EPS };
    let rec = if n_ref > 0 { n_match as f64 / n_ref as f64 } else { EPS };
    let factor = beta * beta;
    let denom = factor * prec + rec;
    if denom > 0.0 {
        (1.0 + factor) * prec * rec / denom
    } else {
        EPS
    }
}

fn score_single(hyp: &str, rf: &str, cfg: &ChrfConfig) -> f64 {
    let hyp_empty = hyp.trim().is_empty();
    let ref_empty = rf.trim().is_empty();
    if hyp_empty && ref_empty {
        return 100.0;
    }
    let hyp_chars: Vec<char> = hyp.split_whitespace().collect::<String>().chars().collect();
    let ref_chars: Vec<char> = rf.split_whitespace().collect::<String>().chars().collect();
    let hyp_words = word_tokens(hyp);
    let ref_words = word_tokens(rf);
    let mut total = 0.0;
    for n in 1..=cfg.char_ngram_max {
        total += f_beta_order(&ngram_counts(&hyp_chars, n), &ngram_counts(&ref_chars, n), cfg.beta);
    }
    for n in 1..=cfg.word_ngram_max {
        total += f_beta_order(&ngram_counts(&hyp_words, n), &ngram_counts(&ref_words, n), cfg.beta);
    }
    100.0 * total / (cfg.char_ngram_max + cfg.word_ngram_max) as f64
}

/// ChrF++ of one hypothesis against one or more references; the returned
/// score is the maximum over references, in [0, 100].
pub fn chrf_pp<R: AsRef<str>>(hyp: &str, refs: &[R], cfg: &ChrfConfig) -> Result<f64> {
    cfg.validate()?;
    if refs.is_empty() {
        return Err(LexError::Usage("chrf_pp needs at least one reference".into()));
    }
    let hyp = nfc(hyp);
    let mut best = f64::NEG_INFINITY;
    for r in refs {
        let score = score_single(&hyp, &nfc(r.as_ref()), cfg);
        if score > best {
            best = score;
        }
    }
    Ok(best)
}
