//! Synthetic multi-domain lexicon fixture.
//!
//! Every domain shares one pool of Latin stems. A source headword is its
//! stem with a single domain marker letter spliced in, and the target is a
//! Devanagari rendering whose consonant substitution table is rotated by
//! five positions per domain index, wrapped in language-specific vowel
//! affixes. Stripping the marker therefore makes the same stem map to a
//! different target in every domain, which is exactly the ambiguity a
//! domain-conditioned model is supposed to resolve.

use std::collections::BTreeSet;

use rand_chacha::rand_core::RngCore;

use crate::data::lexicon::LexiconEntry;
use crate::util::{derived_seed, rng_from};
use crate::{LexError, Result};

/// Latin letters stems are drawn from.
pub const STEM_ALPHABET: &str = "abcdefghijkl";
/// One marker letter per domain, disjoint from the stem alphabet.
pub const MARKERS: &str = "mnopqrstuv";
/// Consonant substitution page; domain d reads it shifted by 5*d.
pub const PAGE: &str = "कखगघचछजझटठडढतथदधनपफबभम";
/// Vowel affixes; language l wraps targets in chars 2l and 2l+1.
pub const VOWELS: &str = "अआइईउऊएऐओऔ";

const STEM_LEN_MIN: u64 = 3;
const STEM_LEN_MAX: u64 = 5;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_domains: usize,
    pub n_langs: usize,
    pub n_pairs_per_cell: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_domains: 2, n_langs: 2, n_pairs_per_cell: 40 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let max_domains = MARKERS.chars().count();
        let max_langs = VOWELS.chars().count() / 2;
        if self.n_domains < 2 {
            return Err(LexError::Config(
                "synthetic fixture needs at least 2 domains to create ambiguity".into(),
            ));
        }
        if self.n_domains > max_domains {
            return Err(LexError::Config(format!(
                "at most {max_domains} domains supported (one marker letter each), got {}",
                self.n_domains
            )));
        }
        if self.n_langs < 1 || self.n_langs > max_langs {
            return Err(LexError::Config(format!(
                "n_langs must be in 1..={max_langs}, got {}",
                self.n_langs
            )));
        }
        if self.n_pairs_per_cell < 1 {
            return Err(LexError::Config("n_pairs_per_cell must be at least 1".into()));
        }
        Ok(())
    }
}

fn sample_stems(seed: u64, n: usize) -> Result<Vec<String>> {
    let alphabet: Vec<char> = STEM_ALPHABET.chars().collect();
    let mut rng = rng_from(&["synth-stems", &seed.to_string()]);
    let mut stems = Vec::with_capacity(n);
    let mut seen = BTreeSet::new();
    let mut attempts = 0usize;
    while stems.len() < n {
        attempts += 1;
        if attempts > 1000 * n {
            return Err(LexError::Config(format!(
                "could not sample {n} distinct stems"
            )));
        }
        let len = STEM_LEN_MIN + rng.next_u64() % (STEM_LEN_MAX - STEM_LEN_MIN + 1);
        let stem: String = (0..len)
            .map(|_| alphabet[(rng.next_u64() % alphabet.len() as u64) as usize])
            .collect();
        if seen.insert(stem.clone()) {
            stems.push(stem);
        }
    }
    Ok(stems)
}

fn render_target(stem: &str, domain_idx: usize, lang_idx: usize) -> String {
    let page: Vec<char> = PAGE.chars().collect();
    let vowels: Vec<char> = VOWELS.chars().collect();
    let mut out = String::new();
    out.push(vowels[2 * lang_idx]);
    for c in stem.chars() {
        let i = STEM_ALPHABET.chars().position(|a| a == c).expect("stem char in alphabet");
        out.push(page[(i + 5 * domain_idx) % page.len()]);
    }
    out.push(vowels[2 * lang_idx + 1]);
    out
}

/// Generates the fixture deterministically: domains, then languages, then
/// stems, in fixed order. Marker position depends only on (seed, domain,
/// stem), so a stem's sources differ across domains but not across
/// languages within a domain.
pub fn synth_fixture(seed: u64, cfg: &SynthConfig) -> Result<Vec<LexiconEntry>> {
    cfg.validate()?;
    let stems = sample_stems(seed, cfg.n_pairs_per_cell)?;
    let markers: Vec<char> = MARKERS.chars().collect();
    let mut entries = Vec::with_capacity(cfg.n_domains * cfg.n_langs * cfg.n_pairs_per_cell);
    for (d, marker) in markers.iter().take(cfg.n_domains).copied().enumerate() {
        let domain = format!("dom{d}");
        for l in 0..cfg.n_langs {
            let tgt_lang = format!("l{l}");
            for stem in &stems {
                let chars: Vec<char> = stem.chars().collect();
                let pos = (derived_seed(&["synth-pos", &seed.to_string(), &domain, stem])
                    % (chars.len() as u64 + 1)) as usize;
                let mut source = String::new();
                for (i, c) in chars.iter().enumerate() {
                    if i == pos {
                        source.push(marker);
                    }
                    source.push(*c);
                }
                if pos == chars.len() {
                    source.push(marker);
                }
                entries.push(LexiconEntry {
                    domain: domain.clone(),
                    src_lang: "src".into(),
                    tgt_lang: tgt_lang.clone(),
                    source,
                    targets: vec![render_target(stem, d, l)],
                });
            }
        }
    }
    Ok(entries)
}
