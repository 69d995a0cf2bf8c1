//! Pluggable tokenizer contract shared by trimming, chunking, extraction
//! prompts, and token-length accounting.
//!
//! Two implementations ship with the toolkit: a whitespace tokenizer (the
//! default for tests and word-level metrics) and a BPE tokenizer loadable
//! from published vocabulary + merges files, so a deployment can count
//! tokens the same way its inference endpoint does.

mod bpe;
mod whitespace;

pub use bpe::BpeTokenizer;
pub use whitespace::WhitespaceTokenizer;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("unknown symbol {symbol:?} at byte {offset} (no fallback rule)")]
    UnknownSymbol { symbol: char, offset: usize },
    #[error("invalid token id {id} at position {index}")]
    InvalidId { id: u32, index: usize },
    #[error("failed to read tokenizer file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed tokenizer file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

/// A tokenization of one source string, with per-token alignment back into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokenizer_name: String,
    pub ids: Vec<u32>,
    /// Byte range of each token in the source text; non-overlapping, ordered.
    pub spans: Vec<(usize, usize)>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Behavioral contract every tokenizer implementation satisfies.
///
/// Implementations are immutable after construction and safe to share
/// across threads. `encode` is deterministic per instance.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;

    /// Full tokenization of `text` with byte-span alignment.
    fn encode(&self, text: &str) -> Result<TokenSeq, TokenizeError>;

    /// Concatenation of token surface forms per the implementation's
    /// detokenization rule.
    fn decode(&self, ids: &[u32]) -> Result<String, TokenizeError>;

    /// Token count shorthand.
    fn count(&self, text: &str) -> Result<usize, TokenizeError> {
        Ok(self.encode(text)?.len())
    }
}

/// Config-file description of which tokenizer to construct.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerSpec {
    Whitespace,
    Bpe { vocab: PathBuf, merges: PathBuf },
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        TokenizerSpec::Whitespace
    }
}

impl TokenizerSpec {
    pub fn build(&self) -> Result<Arc<dyn Tokenizer>, TokenizeError> {
        match self {
            TokenizerSpec::Whitespace => Ok(Arc::new(WhitespaceTokenizer::new())),
            TokenizerSpec::Bpe { vocab, merges } => {
                Ok(Arc::new(BpeTokenizer::from_files(vocab, merges)?))
            }
        }
    }
}
