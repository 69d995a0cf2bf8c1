//! memprobe: measuring verbatim book memorization in language models.
//!
//! The pipeline ingests a book catalog, trims boilerplate margins, cuts
//! books into overlapping prefix/target windows, drives a model behind an
//! HTTP completions endpoint (piecewise or autoregressively), scores
//! generations with six similarity metrics, correlates per-book medians
//! against popularity, prepares fine-tuning attack datasets, and audits
//! LoRA adapter weight updates against base model weights.

pub mod chunking;
pub mod config;
pub mod corpus;
pub mod extract;
pub mod lora;
pub mod metrics;
pub mod report;
pub mod sft;
pub mod tokenize;

pub use config::{ConfigError, RunConfig, TrimSpec};
pub use corpus::{BookRecord, Catalog};
pub use chunking::{Chunk, ChunkSpec};
pub use extract::{EndpointConfig, GenerationRecord};
pub use metrics::{BookSummary, MetricValues, ScoreRecord};
pub use tokenize::{TokenSeq, Tokenizer, TokenizerSpec};
