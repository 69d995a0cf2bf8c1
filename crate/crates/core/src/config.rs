//! Shared run configuration: one JSON document driving every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunking::ChunkSpec;
use crate::corpus::{DEFAULT_HEAD_TOKENS, DEFAULT_TAIL_TOKENS};
use crate::extract::EndpointConfig;
use crate::metrics::Granularity;
use crate::tokenize::TokenizerSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("config path does not exist: {0}")]
    MissingPath(PathBuf),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct TrimSpec {
    pub head_tokens: usize,
    pub tail_tokens: usize,
}

impl Default for TrimSpec {
    fn default() -> Self {
        Self {
            head_tokens: DEFAULT_HEAD_TOKENS,
            tail_tokens: DEFAULT_TAIL_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub extraction_catalog: PathBuf,
    pub extraction_text_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_catalog: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_text_dir: Option<PathBuf>,
    #[serde(default)]
    pub tokenizer: TokenizerSpec,
    #[serde(default)]
    pub trim: TrimSpec,
    #[serde(default)]
    pub chunk: ChunkSpec,
    #[serde(default)]
    pub endpoint: EndpointConfig,
    #[serde(default)]
    pub granularity: Granularity,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|e| ConfigError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Every referenced input path must exist before a stage runs.
    pub fn validate_paths(&self) -> Result<(), ConfigError> {
        let mut required: Vec<&PathBuf> = vec![&self.extraction_catalog, &self.extraction_text_dir];
        if let Some(p) = &self.training_catalog {
            required.push(p);
        }
        if let Some(p) = &self.training_text_dir {
            required.push(p);
        }
        if let TokenizerSpec::Bpe { vocab, merges } = &self.tokenizer {
            required.push(vocab);
            required.push(merges);
        }
        for path in required {
            if !path.exists() {
                return Err(ConfigError::MissingPath(path.clone()));
            }
        }
        Ok(())
    }

    /// Hash of the semantic configuration, stamped into every artifact.
    ///
    /// Covers the knobs that change results (tokenizer kind, trim margins,
    /// chunk geometry, decode parameters, granularity, seed) and excludes
    /// operational ones (paths, endpoint URL, timeouts, concurrency), so
    /// identical runs in different directories produce identical artifacts
    /// and mixing artifacts from different geometries is still caught.
    pub fn fingerprint(&self) -> String {
        let semantic = serde_json::json!({
            "tokenizer": tokenizer_tag(&self.tokenizer),
            "trim": {"head": self.trim.head_tokens, "tail": self.trim.tail_tokens},
            "chunk": {
                "prefix_len": self.chunk.prefix_len,
                "target_len": self.chunk.target_len,
                "stride": self.chunk.stride,
            },
            "decode": {
                "model": self.endpoint.model_name,
                "mode": self.endpoint.mode,
                "max_new_tokens": self.endpoint.max_new_tokens,
                "temperature": self.endpoint.temperature,
                "system_prompt": self.endpoint.system_prompt,
            },
            "granularity": self.granularity,
            "seed": self.seed,
        });
        let digest = Sha256::digest(semantic.to_string().as_bytes());
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

fn tokenizer_tag(spec: &TokenizerSpec) -> String {
    match spec {
        TokenizerSpec::Whitespace => "whitespace".to_string(),
        TokenizerSpec::Bpe { vocab, merges } => {
            format!("bpe:{}:{}", vocab.display(), merges.display())
        }
    }
}
