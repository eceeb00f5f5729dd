//! Lexicon file handling, vocabulary, split generation, and the synthetic
//! multi-domain fixture.

pub mod lexicon;
pub mod splits;
pub mod synth;
pub mod vocab;

pub use lexicon::{parse_lexicon, parse_lexicon_str, write_lexicon, write_lexicon_string, LexiconEntry};
pub use splits::{split_ddst, split_idst, split_iddt, DatasetSplits, Regime};
pub use synth::{synth_fixture, SynthConfig};
pub use vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID, SEP_ID, UNK_ID};
