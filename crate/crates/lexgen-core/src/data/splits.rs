//! Deterministic split generation for the three evaluation regimes.
//!
//! IDST holds out data within every (domain, target-language) group;
//! DDST holds out whole domains (zero-shot domains); IDDT holds out whole
//! target languages while keeping the domain set fixed.
//!
//! Every group is shuffled with a seed derived from
//! (regime-tag, seed, domain, tgt_lang) via the documented SHA-256 rule, so
//! any implementation can replay the exact membership. Duplicate keys are
//! merged before splitting; assignment inside a shuffled group is
//! train-first, then valid, with test taking the tail.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::lexicon::{merge_duplicates, LexiconEntry};
use crate::util::{fisher_yates, rng_from};
use crate::{LexError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Idst,
    Ddst,
    Iddt,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Idst => "idst",
            Regime::Ddst => "ddst",
            Regime::Iddt => "iddt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "idst" => Ok(Regime::Idst),
            "ddst" => Ok(Regime::Ddst),
            "iddt" => Ok(Regime::Iddt),
            other => Err(LexError::Config(format!(
                "unknown split regime '{other}' (expected idst | ddst | iddt)"
            ))),
        }
    }
}

/// Seed, regime, and parameters that produced a split, for the sidecar file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub regime: Regime,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub regime: Regime,
    pub train: Vec<LexiconEntry>,
    pub valid: Vec<LexiconEntry>,
    pub test: Vec<LexiconEntry>,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

type Group = Vec<LexiconEntry>;

fn group_by_domain_lang(entries: Vec<LexiconEntry>) -> BTreeMap<(String, String), Group> {
    let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
    for e in entries {
        groups
            .entry((e.domain.clone(), e.tgt_lang.clone()))
            .or_default()
            .push(e);
    }
    groups
}

fn shuffled(regime_tag: &str, seed: u64, domain: &str, lang: &str, mut g: Group) -> Group {
    let mut rng = rng_from(&[regime_tag, &seed.to_string(), domain, lang]);
    fisher_yates(&mut g, &mut rng);
    g
}

/// In-domain same-target split: per (domain, tgt_lang) group, 80/10/10 with
/// the rounding remainder going to train; groups smaller than 3 go wholly
/// to train with a warning.
pub fn split_idst(entries: Vec<LexiconEntry>, seed: u64) -> Result<DatasetSplits> {
    if entries.is_empty() {
        return Err(LexError::Data("cannot split zero entries".into()));
    }
    let entries = merge_duplicates(entries);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();
    for ((domain, lang), group) in group_by_domain_lang(entries) {
        let g = shuffled("idst", seed, &domain, &lang, group);
        let n = g.len();
        if n < 3 {
            warnings.push(format!(
                "group ({domain}, {lang}) has only {n} entries; all assigned to train"
            ));
            train.extend(g);
            continue;
        }
        let n_test = n / 10;
        let n_valid = n / 10;
        let n_train = n - n_test - n_valid;
        let mut iter = g.into_iter();
        train.extend(iter.by_ref().take(n_train));
        valid.extend(iter.by_ref().take(n_valid));
        test.extend(iter);
    }
    Ok(DatasetSplits {
        regime: Regime::Idst,
        train,
        valid,
        test,
        provenance: Provenance { regime: Regime::Idst, seed, params: BTreeMap::new() },
        warnings,
    })
}

/// Domain-holdout split: 90/10 train/valid per group over the training
/// domains; every entry of a test domain goes to test (zero-shot domains).
pub fn split_ddst(
    entries: Vec<LexiconEntry>,
    train_domains: &[String],
    test_domains: &[String],
    seed: u64,
) -> Result<DatasetSplits> {
    let train_set: BTreeSet<&String> = train_domains.iter().collect();
    let test_set: BTreeSet<&String> = test_domains.iter().collect();
    let overlap: Vec<&&String> = train_set.intersection(&test_set).collect();
    if !overlap.is_empty() {
        return Err(LexError::Config(format!(
            "train and test domains overlap: {overlap:?}"
        )));
    }
    let entries = merge_duplicates(entries);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();
    let mut skipped = 0usize;
    let mut in_test_domains = Vec::new();
    let mut in_train_domains = Vec::new();
    for e in entries {
        if test_set.contains(&e.domain) {
            in_test_domains.push(e);
        } else if train_set.contains(&e.domain) {
            in_train_domains.push(e);
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        warnings.push(format!(
            "{skipped} entries belong to neither domain list and were dropped"
        ));
    }
    for ((domain, lang), group) in group_by_domain_lang(in_train_domains) {
        let g = shuffled("ddst", seed, &domain, &lang, group);
        let n = g.len();
        let n_valid = n / 10;
        let mut iter = g.into_iter();
        train.extend(iter.by_ref().take(n - n_valid));
        valid.extend(iter);
    }
    test.extend(in_test_domains);
    if test.is_empty() {
        warnings.push("no entries found for any test domain; test split is empty".into());
    }
    let mut params = BTreeMap::new();
    params.insert("train_domains".into(), train_domains.join(","));
    params.insert("test_domains".into(), test_domains.join(","));
    Ok(DatasetSplits {
        regime: Regime::Ddst,
        train,
        valid,
        test,
        provenance: Provenance { regime: Regime::Ddst, seed, params },
        warnings,
    })
}

/// Language-holdout split: train/valid 90/10 over the training target
/// languages; the test side reuses the IDST shuffle for test-language
/// groups and takes exactly the IDST test slice, restricted to domains the
/// training side covers.
pub fn split_iddt(
    entries: Vec<LexiconEntry>,
    train_langs: &[String],
    test_langs: &[String],
    seed: u64,
) -> Result<DatasetSplits> {
    let train_set: BTreeSet<&String> = train_langs.iter().collect();
    let test_set: BTreeSet<&String> = test_langs.iter().collect();
    let overlap: Vec<&&String> = train_set.intersection(&test_set).collect();
    if !overlap.is_empty() {
        return Err(LexError::Config(format!(
            "train and test target languages overlap: {overlap:?}"
        )));
    }
    let entries = merge_duplicates(entries);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();
    let mut skipped = 0usize;
    let mut train_side = Vec::new();
    let mut test_side = Vec::new();
    for e in entries {
        if train_set.contains(&e.tgt_lang) {
            train_side.push(e);
        } else if test_set.contains(&e.tgt_lang) {
            test_side.push(e);
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        warnings.push(format!(
            "{skipped} entries belong to neither language list and were dropped"
        ));
    }
    let mut train_domains: BTreeSet<String> = BTreeSet::new();
    for ((domain, lang), group) in group_by_domain_lang(train_side) {
        train_domains.insert(domain.clone());
        let g = shuffled("iddt", seed, &domain, &lang, group);
        let n = g.len();
        let n_valid = n / 10;
        let mut iter = g.into_iter();
        train.extend(iter.by_ref().take(n - n_valid));
        valid.extend(iter);
    }
    let mut filtered = 0usize;
    for ((domain, lang), group) in group_by_domain_lang(test_side) {
        // Same shuffle the IDST splitter would use, so the held-out slice
        // is literally the IDST test set for that group.
        let g = shuffled("idst", seed, &domain, &lang, group);
        let n = g.len();
        if n < 3 {
            continue;
        }
        let n_test = n / 10;
        for e in g.into_iter().skip(n - n_test) {
            if train_domains.contains(&e.domain) {
                test.push(e);
            } else {
                filtered += 1;
            }
        }
    }
    if filtered > 0 {
        warnings.push(format!(
            "{filtered} test-language entries dropped: their domain has no training data"
        ));
    }
    if test.is_empty() {
        warnings.push("no test-language entries survived; test split is empty".into());
    }
    let mut params = BTreeMap::new();
    params.insert("train_langs".into(), train_langs.join(","));
    params.insert("test_langs".into(), test_langs.join(","));
    Ok(DatasetSplits {
        regime: Regime::Iddt,
        train,
        valid,
        test,
        provenance: Provenance { regime: Regime::Iddt, seed, params },
        warnings,
    })
}

impl DatasetSplits {
    /// Split keys must never collide across train/valid/test.
    pub fn assert_disjoint(&self) -> Result<()> {
        let mut seen: BTreeMap<String, &'static str> = BTreeMap::new();
        for (name, list) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
        {
            for e in list {
                if let Some(prev) = seen.insert(e.key(), name) {
                    return Err(LexError::Data(format!(
                        "entry '{}' appears in both {prev} and {name}",
                        e.source
                    )));
                }
            }
        }
        Ok(())
    }
}
