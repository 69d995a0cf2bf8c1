//! Driving a model behind an HTTP inference endpoint through piecewise and
//! autoregressive extraction, with greedy decoding.
//!
//! The wire protocol is the de-facto open completions API: raw-prompt runs
//! POST `/v1/completions`, chat runs POST `/v1/chat/completions`. A mock
//! server speaking the same protocol backs the test suite and the
//! `mock-serve` subcommand.

mod autoregressive;
mod client;
mod mock;
mod piecewise;

pub use autoregressive::{run_autoregressive, ArOutcome};
pub use client::{complete, Prompt};
pub use mock::{MockBehavior, MockRequest, MockScript, MockServer};
pub use piecewise::{read_records_jsonl, run_piecewise, write_records_jsonl, RunJournal};

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::TokenizeError;

/// Requested on the wire on top of the token budget; some servers count
/// special tokens against `max_tokens`, and the client truncates anyway.
pub const MAX_TOKENS_SLACK: usize = 8;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("endpoint request failed after {attempts} attempt(s): {message}")]
    Endpoint { attempts: u32, message: String },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("chunk {book_id}:{index} failed: {source}")]
    ChunkFailed {
        book_id: String,
        index: usize,
        #[source]
        source: Box<ExtractError>,
    },
    #[error("book {book_id} has {tokens} trimmed tokens; need at least {needed}")]
    BookTooShort {
        book_id: String,
        tokens: usize,
        needed: usize,
    },
    #[error("mock server could not bind port {port}: {message}")]
    MockBind { port: u16, message: String },
    #[error("tokenizer failure: {0}")]
    Tokenize(#[from] TokenizeError),
    #[error("journal io at {path}: {source}")]
    Journal {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed journal line {line}: {message}")]
    JournalParse { line: usize, message: String },
}

/// Raw prompting for pretrained models vs chat-template prompting for
/// instruct models (system + user roles, no assistant priming).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Raw,
    Chat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    Piecewise,
    Autoregressive,
}

/// Connection and decode parameters for one endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default)]
    pub mode: PromptMode,
    /// Token budget per completion; the wire request adds [`MAX_TOKENS_SLACK`].
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    /// Greedy decoding (0.0) for every run meant to be deterministic.
    #[serde(default)]
    pub temperature: f64,
    /// System message for chat mode. Defaults to the SFT attack system
    /// string; the paper leaves the baseline system content unstated, so
    /// runs record whatever was used.
    #[serde(default = "default_system_prompt")]
    pub system_prompt: String,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
}

fn default_max_new_tokens() -> usize {
    30
}
fn default_system_prompt() -> String {
    crate::sft::SFT_SYSTEM_PROMPT.to_string()
}
fn default_timeout() -> u64 {
    120
}
fn default_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    250
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".to_string(),
            model_name: "unspecified".to_string(),
            mode: PromptMode::Raw,
            max_new_tokens: default_max_new_tokens(),
            temperature: 0.0,
            system_prompt: default_system_prompt(),
            request_timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff(),
        }
    }
}

impl EndpointConfig {
    /// Model identity plus decode parameters, stamped into every record.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}|{:?}|temp={}|max_new={}",
            self.model_name, self.mode, self.temperature, self.max_new_tokens
        )
    }
}

/// Model output for one chunk or one autoregressive run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub book_id: String,
    /// Present for piecewise records; autoregressive records use `run_index`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_index: Option<usize>,
    #[serde(default)]
    pub run_index: usize,
    pub mode: GenMode,
    pub prompt_mode: PromptMode,
    /// Detokenized generation after token truncation; what scoring consumes.
    pub generated_text: String,
    /// Raw completion body, kept when truncation or detokenization changed it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_completion: Option<String>,
    /// Token ids under the run tokenizer (informational; ids from a
    /// whitespace tokenizer are process-local).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generated_ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_completed: Option<usize>,
    /// Autoregressive run stopped early (step failure or stalled output).
    #[serde(default)]
    pub truncated: bool,
    pub endpoint_fingerprint: String,
    pub timestamp: String,
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
