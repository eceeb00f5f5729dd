//! Exact-match accuracy metrics over ranked prediction lists.

use crate::data::LexiconEntry;
use crate::util::nfc;
use crate::{LexError, Result};

/// Canonical form for exact-match comparison: Unicode NFC, outer
/// whitespace trimmed, runs of internal whitespace collapsed to one
/// space. Case is preserved.
pub fn normalize_for_match(s: &str) -> String {
    nfc(s).split_whitespace().collect::<Vec<_>>().join(" ")
}

fn entry_matches(pred: &str, entry: &LexiconEntry) -> bool {
    let p = normalize_for_match(pred);
    entry.targets.iter().any(|t| normalize_for_match(t) == p)
}

/// Fraction of entries whose single top prediction equals any accepted
/// target after normalization.
pub fn precision_at_1(top1: &[String], entries: &[LexiconEntry]) -> Result<f64> {
    if top1.len() != entries.len() {
        return Err(LexError::Usage(format!(
            "got {} predictions for {} entries",
            top1.len(),
            entries.len()
        )));
    }
    if entries.is_empty() {
        return Err(LexError::Usage("precision_at_1 needs at least one entry".into()));
    }
    let hits = top1
        .iter()
        .zip(entries)
        .filter(|(p, e)| entry_matches(p, e))
        .count();
    Ok(hits as f64 / entries.len() as f64)
}

/// Fraction of entries where any of the first k ranked predictions
/// equals any accepted target after normalization. Shorter prediction
/// lists are used as-is.
pub fn recall_at_k(topk: &[Vec<String>], entries: &[LexiconEntry], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(LexError::Usage("recall_at_k needs k >= 1".into()));
    }
    if topk.len() != entries.len() {
        return Err(LexError::Usage(format!(
            "got {} prediction lists for {} entries",
            topk.len(),
            entries.len()
        )));
    }
    if entries.is_empty() {
        return Err(LexError::Usage("recall_at_k needs at least one entry".into()));
    }
    let hits = topk
        .iter()
        .zip(entries)
        .filter(|(preds, e)| {
            preds
                .iter()
                .take(k)
                .any(|p| entry_matches(p, e))
        })
        .count();
    Ok(hits as f64 / entries.len() as f64)
}
