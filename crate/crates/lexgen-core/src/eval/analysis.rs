//! Word-level intersection and transliteration analysis.
//!
//! Scores each test source word rather than whole phrases: a word is
//! "intersecting" when it also occurs somewhere in a training source
//! phrase, and its top-1 prediction counts as correct when the target
//! word it aligns to matches the word the reference aligns it to.
//! Reference-side alignments come from a user-supplied TSV when given
//! (with the diagonal fallback filling gaps); the prediction side always
//! uses the fallback aligner, since external alignments cannot exist for
//! freshly decoded text.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::data::LexiconEntry;
use crate::eval::metrics::normalize_for_match;
use crate::{LexError, Result};

/// Source phrase → word-index alignment pairs (src word, tgt word).
pub type AlignmentMap = BTreeMap<String, Vec<(usize, usize)>>;

/// Source word → its transliteration in the target script.
pub type TranslitTable = BTreeMap<String, String>;

/// Deterministic diagonal word alignment: source word i maps to target
/// word round(i * (T-1) / (S-1)), with single-word sources pinned to
/// target word 0. A coarse stand-in for a learned aligner.
pub fn fallback_align(src_phrase: &str, tgt_phrase: &str) -> Vec<(usize, usize)> {
    let s = src_phrase.split_whitespace().count();
    let t = tgt_phrase.split_whitespace().count();
    if s == 0 || t == 0 {
        return Vec::new();
    }
    if s == 1 {
        return vec![(0, 0)];
    }
    (0..s)
        .map(|i| {
            let j = (i as f64 * (t - 1) as f64 / (s - 1) as f64).round() as usize;
            (i, j)
        })
        .collect()
}

/// Loads `source-phrase \t i-j i-j ...` rows (Pharaoh pair format).
pub fn load_alignment_tsv(path: &Path) -> Result<AlignmentMap> {
    let text = std::fs::read_to_string(path)?;
    let mut map = AlignmentMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(LexError::parse(
                line_no,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        let source = cols[0].trim().to_string();
        if source.is_empty() {
            return Err(LexError::parse(line_no, "empty source phrase".to_string()));
        }
        let mut pairs = Vec::new();
        for tok in cols[1].split_whitespace() {
            let (a, b) = tok.split_once('-').ok_or_else(|| {
                LexError::parse(line_no, format!("alignment pair '{tok}' is not i-j"))
            })?;
            let i: usize = a.parse().map_err(|_| {
                LexError::parse(line_no, format!("bad source index in '{tok}'"))
            })?;
            let j: usize = b.parse().map_err(|_| {
                LexError::parse(line_no, format!("bad target index in '{tok}'"))
            })?;
            pairs.push((i, j));
        }
        map.insert(source, pairs);
    }
    Ok(map)
}

/// Loads `source-word \t transliteration` rows.
pub fn load_translit_tsv(path: &Path) -> Result<TranslitTable> {
    let text = std::fs::read_to_string(path)?;
    let mut table = TranslitTable::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(LexError::parse(
                line_no,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        let src = cols[0].trim();
        let tgt = cols[1].trim();
        if src.is_empty() || tgt.is_empty() {
            return Err(LexError::parse(line_no, "empty column".to_string()));
        }
        table.insert(normalize_for_match(src), tgt.to_string());
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionReport {
    pub intersect_total: usize,
    pub intersect_correct: usize,
    pub nonintersect_total: usize,
    pub nonintersect_correct: usize,
    /// Source words skipped because no alignment pair covered them.
    pub unaligned: usize,
    pub used_external_alignments: bool,
    pub p_at_1_intersect: Option<f64>,
    pub p_at_1_nonintersect: Option<f64>,
    /// Among correct non-intersecting words covered by the table, the
    /// fraction whose predicted word is not the source's transliteration.
    pub non_translit_fraction: Option<f64>,
}

fn rate(correct: usize, total: usize) -> Option<f64> {
    if total == 0 {
        None
    } else {
        Some(correct as f64 / total as f64)
    }
}

/// For source word i, the aligned target word is the lowest-indexed
/// target word among i's pairs.
fn aligned_word<'a>(pairs: &[(usize, usize)], i: usize, tgt_words: &[&'a str]) -> Option<&'a str> {
    pairs
        .iter()
        .filter(|(s, _)| *s == i)
        .map(|(_, t)| *t)
        .min()
        .and_then(|j| tgt_words.get(j).copied())
}

/// Word-level top-1 accuracy split by whether the source word was seen
/// in training, plus the share of correct unseen words that are not
/// plain transliterations. `predictions` holds the top-1 phrase per test
/// entry, in entry order.
pub fn intersection_analysis(
    train_entries: &[LexiconEntry],
    test_entries: &[LexiconEntry],
    predictions: &[String],
    alignments: Option<&AlignmentMap>,
    translit: Option<&TranslitTable>,
) -> Result<IntersectionReport> {
    if predictions.len() != test_entries.len() {
        return Err(LexError::Usage(format!(
            "got {} predictions for {} test entries",
            predictions.len(),
            test_entries.len()
        )));
    }
    let train_words: BTreeSet<String> = train_entries
        .iter()
        .flat_map(|e| e.source.split_whitespace())
        .map(normalize_for_match)
        .collect();

    let mut report = IntersectionReport {
        intersect_total: 0,
        intersect_correct: 0,
        nonintersect_total: 0,
        nonintersect_correct: 0,
        unaligned: 0,
        used_external_alignments: alignments.is_some(),
        p_at_1_intersect: None,
        p_at_1_nonintersect: None,
        non_translit_fraction: None,
    };
    let mut correct_unseen: Vec<(String, String)> = Vec::new();

    for (entry, pred) in test_entries.iter().zip(predictions) {
        let reference = &entry.targets[0];
        let ref_words: Vec<&str> = reference.split_whitespace().collect();
        let pred_words: Vec<&str> = pred.split_whitespace().collect();
        let fallback;
        let ref_pairs: &[(usize, usize)] = match alignments.and_then(|m| m.get(&entry.source)) {
            Some(pairs) => pairs,
            None => {
                fallback = fallback_align(&entry.source, reference);
                &fallback
            }
        };
        let pred_pairs = fallback_align(&entry.source, pred);

        for (i, src_word) in entry.source.split_whitespace().enumerate() {
            let Some(ref_word) = aligned_word(ref_pairs, i, &ref_words) else {
                report.unaligned += 1;
                continue;
            };
            let correct = match aligned_word(&pred_pairs, i, &pred_words) {
                Some(pred_word) => {
                    normalize_for_match(pred_word) == normalize_for_match(ref_word)
                }
                None => false,
            };
            let src_norm = normalize_for_match(src_word);
            if train_words.contains(&src_norm) {
                report.intersect_total += 1;
                report.intersect_correct += correct as usize;
            } else {
                report.nonintersect_total += 1;
                report.nonintersect_correct += correct as usize;
                if correct {
                    correct_unseen.push((src_norm, normalize_for_match(ref_word)));
                }
            }
        }
    }

    report.p_at_1_intersect = rate(report.intersect_correct, report.intersect_total);
    report.p_at_1_nonintersect = rate(report.nonintersect_correct, report.nonintersect_total);
    if let Some(table) = translit {
        let covered: Vec<&(String, String)> = correct_unseen
            .iter()
            .filter(|(src, _)| table.contains_key(src))
            .collect();
        let non_translit = covered
            .iter()
            .filter(|(src, tgt)| normalize_for_match(&table[src]) != *tgt)
            .count();
        report.non_translit_fraction = rate(non_translit, covered.len());
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslitRate {
    /// None when no pair was covered by the table.
    pub rate: Option<f64>,
    pub covered: usize,
    pub uncovered: usize,
}

/// Fraction of (source, target) pairs whose target is exactly the
/// table's transliteration of the source; pairs missing from the table
/// are excluded from the denominator and tallied as uncovered.
pub fn transliteration_rate(pairs: &[(String, String)], table: &TranslitTable) -> TranslitRate {
    let mut covered = 0usize;
    let mut hits = 0usize;
    for (src, tgt) in pairs {
        if let Some(tr) = table.get(&normalize_for_match(src)) {
            covered += 1;
            if normalize_for_match(tr) == normalize_for_match(tgt) {
                hits += 1;
            }
        }
    }
    TranslitRate {
        rate: rate(hits, covered),
        covered,
        uncovered: pairs.len() - covered,
    }
}
