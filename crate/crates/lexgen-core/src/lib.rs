//! Multi-domain lexicon translation: a small encoder-decoder transformer
//! with token-gated domain routing, plus the data, training, decoding, and
//! evaluation machinery around it.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod runconfig;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{LexError, Result};
