//! Character-level vocabulary with fixed specials and per-language tags.
//!
//! Token ids: ⟨pad⟩=0, ⟨unk⟩=1, ⟨bos⟩=2, ⟨eos⟩=3, ⟨sep⟩=4 (the word
//! separator that stands in for spaces), then one ⟨2xx⟩ tag per target
//! language in sorted order, then every character seen in the training
//! text, sorted by codepoint. Text is NFC-normalized before lookup.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::data::lexicon::LexiconEntry;
use crate::util::nfc;
use crate::{LexError, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const SEP_ID: u32 = 4;

pub const PAD_TOKEN: &str = "⟨pad⟩";
pub const UNK_TOKEN: &str = "⟨unk⟩";
pub const BOS_TOKEN: &str = "⟨bos⟩";
pub const EOS_TOKEN: &str = "⟨eos⟩";
pub const SEP_TOKEN: &str = "⟨sep⟩";

/// Serialized as its token list only (see checkpoint manifest); rebuild
/// with `from_tokens` so the lookup map is always consistent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    by_token: BTreeMap<String, u32>,
}

fn lang_tag_token(lang: &str) -> String {
    format!("⟨2{lang}⟩")
}

impl Vocab {
    /// Builds the vocabulary from training entries: all characters of
    /// sources and targets (after NFC) plus a tag per target language.
    pub fn build(entries: &[LexiconEntry]) -> Result<Self> {
        if entries.is_empty() {
            return Err(LexError::Vocab("cannot build a vocabulary from zero entries".into()));
        }
        let mut langs = BTreeSet::new();
        let mut chars = BTreeSet::new();
        for e in entries {
            langs.insert(e.tgt_lang.clone());
            for text in std::iter::once(&e.source).chain(e.targets.iter()) {
                for c in nfc(text).chars() {
                    if c != ' ' {
                        chars.insert(c);
                    }
                }
            }
        }
        let mut tokens: Vec<String> = vec![
            PAD_TOKEN.into(),
            UNK_TOKEN.into(),
            BOS_TOKEN.into(),
            EOS_TOKEN.into(),
            SEP_TOKEN.into(),
        ];
        tokens.extend(langs.iter().map(|l| lang_tag_token(l)));
        tokens.extend(chars.iter().map(|c| c.to_string()));
        Self::from_tokens(tokens)
    }

    /// Reconstructs a vocabulary from its token list (checkpoint load).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let expected = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN, SEP_TOKEN];
        if tokens.len() < expected.len() {
            return Err(LexError::Vocab(format!(
                "token list too short ({} entries) to hold the specials",
                tokens.len()
            )));
        }
        for (i, want) in expected.iter().enumerate() {
            if tokens[i] != *want {
                return Err(LexError::Vocab(format!(
                    "special token {i} is '{}', expected '{want}'",
                    tokens[i]
                )));
            }
        }
        let mut by_token = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if by_token.insert(t.clone(), i as u32).is_some() {
                return Err(LexError::Vocab(format!("duplicate token '{t}'")));
            }
        }
        Ok(Vocab { tokens, by_token })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.by_token.get(token).copied()
    }

    pub fn lang_tag_id(&self, lang: &str) -> Result<u32> {
        self.id_of(&lang_tag_token(lang)).ok_or_else(|| {
            LexError::Vocab(format!("language tag '{}' is not in the vocabulary", lang_tag_token(lang)))
        })
    }

    /// All language tags present, as bare language names.
    pub fn languages(&self) -> Vec<String> {
        self.tokens
            .iter()
            .filter_map(|t| {
                t.strip_prefix("⟨2")
                    .and_then(|rest| rest.strip_suffix('⟩'))
                    .map(|l| l.to_string())
            })
            .collect()
    }

    /// Character-level encoding: NFC, spaces become ⟨sep⟩, unknown
    /// characters become ⟨unk⟩. Returns the ids and the unknown count.
    pub fn encode(&self, phrase: &str) -> (Vec<u32>, usize) {
        let mut ids = Vec::new();
        let mut unknown = 0;
        for c in nfc(phrase).chars() {
            if c == ' ' {
                ids.push(SEP_ID);
            } else {
                match self.id_of(&c.to_string()) {
                    Some(id) => ids.push(id),
                    None => {
                        ids.push(UNK_ID);
                        unknown += 1;
                    }
                }
            }
        }
        (ids, unknown)
    }

    /// Inverse of `encode` for in-vocab text: ⟨sep⟩ maps back to a space;
    /// ⟨pad⟩/⟨bos⟩/⟨eos⟩ and language tags are dropped; ⟨unk⟩ renders as
    /// its glyph so mistakes stay visible.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                SEP_ID => out.push(' '),
                PAD_ID | BOS_ID | EOS_ID => {}
                UNK_ID => out.push_str(UNK_TOKEN),
                _ => {
                    if let Some(tok) = self.tokens.get(id as usize) {
                        if !(tok.starts_with("⟨2") && tok.ends_with('⟩')) {
                            out.push_str(tok);
                        }
                    }
                }
            }
        }
        out
    }

    /// Source preparation: [lang tag] ++ chars ++ [⟨eos⟩]. No domain
    /// identifier is ever injected; domain identity is not an inference-
    /// time input.
    pub fn prepare_source(&self, tgt_lang: &str, source: &str) -> Result<Vec<u32>> {
        let tag = self.lang_tag_id(tgt_lang)?;
        let (mut ids, _) = self.encode(source);
        ids.insert(0, tag);
        ids.push(EOS_ID);
        Ok(ids)
    }

    /// Target-side encoding (bare character ids, no specials).
    pub fn encode_target(&self, target: &str) -> Vec<u32> {
        self.encode(target).0
    }
}
