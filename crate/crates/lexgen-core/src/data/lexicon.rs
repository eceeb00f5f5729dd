//! Lexicon TSV parsing and writing.
//!
//! One entry per line: domain, src_lang, tgt_lang, source, targets — five
//! tab-separated columns, with alternative references inside the targets
//! column separated by `||`. Blank lines and `#` comments are skipped.

use std::path::Path;

use crate::{LexError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub domain: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub source: String,
    pub targets: Vec<String>,
}

impl LexiconEntry {
    /// Identity used for split-disjointness: same (domain, src_lang,
    /// tgt_lang, source) means the same dictionary headword.
    pub fn key(&self) -> String {
        [
            self.domain.as_str(),
            self.src_lang.as_str(),
            self.tgt_lang.as_str(),
            self.source.as_str(),
        ]
        .join("\u{1f}")
    }
}

fn valid_tag(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

pub fn parse_lexicon_str(text: &str) -> Result<Vec<LexiconEntry>> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(LexError::parse(
                line_no,
                format!("expected 5 tab-separated columns, found {}", cols.len()),
            ));
        }
        let domain = cols[0].trim().to_string();
        let src_lang = cols[1].trim().to_string();
        let tgt_lang = cols[2].trim().to_string();
        let source = cols[3].trim().to_string();
        for (what, tag) in [("domain", &domain), ("src_lang", &src_lang), ("tgt_lang", &tgt_lang)] {
            if !valid_tag(tag) {
                return Err(LexError::parse(
                    line_no,
                    format!("{what} tag '{tag}' is not [a-z0-9_]+"),
                ));
            }
        }
        if source.is_empty() {
            return Err(LexError::parse(line_no, "empty source phrase".to_string()));
        }
        let targets: Vec<String> = cols[4]
            .split("||")
            .map(|t| t.trim().to_string())
            .collect();
        if targets.iter().any(|t| t.is_empty()) {
            return Err(LexError::parse(line_no, "empty target phrase".to_string()));
        }
        entries.push(LexiconEntry { domain, src_lang, tgt_lang, source, targets });
    }
    Ok(entries)
}

pub fn parse_lexicon(path: &Path) -> Result<Vec<LexiconEntry>> {
    let text = std::fs::read_to_string(path)?;
    parse_lexicon_str(&text)
}

pub fn write_lexicon_string(entries: &[LexiconEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.domain,
            e.src_lang,
            e.tgt_lang,
            e.source,
            e.targets.join("||")
        ));
    }
    out
}

pub fn write_lexicon(path: &Path, entries: &[LexiconEntry]) -> Result<()> {
    std::fs::write(path, write_lexicon_string(entries))?;
    Ok(())
}

/// Merges entries that share a key by unioning their target lists in first-
/// appearance order. Keeps overall entry order by first appearance.
pub fn merge_duplicates(entries: Vec<LexiconEntry>) -> Vec<LexiconEntry> {
    let mut order: Vec<String> = Vec::new();
    let mut by_key: std::collections::BTreeMap<String, LexiconEntry> = Default::default();
    for e in entries {
        let k = e.key();
        match by_key.get_mut(&k) {
            None => {
                order.push(k.clone());
                by_key.insert(k, e);
            }
            Some(existing) => {
                for t in e.targets {
                    if !existing.targets.contains(&t) {
                        existing.targets.push(t);
                    }
                }
            }
        }
    }
    order
        .into_iter()
        .map(|k| by_key.remove(&k).expect("key recorded at insert"))
        .collect()
}
