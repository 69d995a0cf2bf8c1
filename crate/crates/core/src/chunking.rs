//! Sliding-window chunking of trimmed books.
//!
//! A chunk is a fixed-length window over the trimmed token stream, split
//! into a prompt prefix and a continuation target. Windows advance by
//! `stride` tokens; a final partial window is dropped rather than padded.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BookRecord;
use crate::tokenize::{TokenizeError, Tokenizer};

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("tokenizer failure: {0}")]
    Tokenize(#[from] TokenizeError),
    #[error("invalid chunk spec: {0}")]
    InvalidSpec(String),
    #[error("chunk io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed chunk line {line}: {message}")]
    MalformedLine { line: usize, message: String },
}

/// Window geometry: prefix length, target length, and stride, in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub prefix_len: usize,
    pub target_len: usize,
    pub stride: usize,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        // 530-token windows advancing by 30: 500-token prompt, 30-token target.
        Self {
            prefix_len: 500,
            target_len: 30,
            stride: 30,
        }
    }
}

impl ChunkSpec {
    pub fn window(&self) -> usize {
        self.prefix_len + self.target_len
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.prefix_len == 0 || self.target_len == 0 || self.stride == 0 {
            return Err(ChunkError::InvalidSpec(
                "prefix_len, target_len, and stride must all be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// One (prefix, target) window at a known token offset in a trimmed book.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chunk {
    pub book_id: String,
    pub index: usize,
    pub start_token: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub prefix_ids: Vec<u32>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub target_ids: Vec<u32>,
    pub prefix_text: String,
    pub target_text: String,
}

/// Number of full windows in a stream of `total_tokens` tokens.
pub fn chunk_count(total_tokens: usize, spec: &ChunkSpec) -> usize {
    if total_tokens < spec.window() {
        0
    } else {
        (total_tokens - spec.window()) / spec.stride + 1
    }
}

/// Cut a trimmed book into chunks. Unusable books produce no chunks.
pub fn make_chunks(
    book: &BookRecord,
    tok: &dyn Tokenizer,
    spec: &ChunkSpec,
) -> Result<Vec<Chunk>, ChunkError> {
    spec.validate()?;
    if !book.usable {
        return Ok(Vec::new());
    }
    let seq = tok.encode(&book.trimmed_text)?;
    let n = chunk_count(seq.len(), spec);
    let mut chunks = Vec::with_capacity(n);
    for index in 0..n {
        let start = index * spec.stride;
        let prefix_ids = seq.ids[start..start + spec.prefix_len].to_vec();
        let target_ids =
            seq.ids[start + spec.prefix_len..start + spec.prefix_len + spec.target_len].to_vec();
        let prefix_text = tok.decode(&prefix_ids)?;
        let target_text = tok.decode(&target_ids)?;
        chunks.push(Chunk {
            book_id: book.book_id.clone(),
            index,
            start_token: start,
            prefix_ids,
            target_ids,
            prefix_text,
            target_text,
        });
    }
    Ok(chunks)
}

/// Corpus-level chunk totals over usable books.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkStats {
    pub total: usize,
    pub min_per_book: usize,
    pub max_per_book: usize,
}

/// Aggregate per-book chunk counts. With no books, everything reports 0.
pub fn chunk_stats(counts_per_book: &[usize]) -> ChunkStats {
    if counts_per_book.is_empty() {
        return ChunkStats {
            total: 0,
            min_per_book: 0,
            max_per_book: 0,
        };
    }
    ChunkStats {
        total: counts_per_book.iter().sum(),
        min_per_book: *counts_per_book.iter().min().expect("nonempty"),
        max_per_book: *counts_per_book.iter().max().expect("nonempty"),
    }
}

/// JSONL row shape for chunk dumps; token ids are process-local and omitted.
#[derive(Debug, Serialize, Deserialize)]
struct ChunkRow<'a> {
    book_id: &'a str,
    index: usize,
    start_token: usize,
    prefix_text: &'a str,
    target_text: &'a str,
}

pub fn write_chunk_dump<W: io::Write>(chunks: &[Chunk], mut writer: W) -> Result<(), ChunkError> {
    for c in chunks {
        let row = ChunkRow {
            book_id: &c.book_id,
            index: c.index,
            start_token: c.start_token,
            prefix_text: &c.prefix_text,
            target_text: &c.target_text,
        };
        serde_json::to_writer(&mut writer, &row)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a chunk dump back. Ids are left empty; downstream consumers that
/// need token counts re-encode the texts.
pub fn read_chunk_dump<R: io::BufRead>(reader: R) -> Result<Vec<Chunk>, ChunkError> {
    let mut chunks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| ChunkError::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        let field = |k: &str| -> Result<String, ChunkError> {
            row.get(k)
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| ChunkError::MalformedLine {
                    line: i + 1,
                    message: format!("missing string field `{k}`"),
                })
        };
        let num = |k: &str| -> Result<usize, ChunkError> {
            row.get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| ChunkError::MalformedLine {
                    line: i + 1,
                    message: format!("missing numeric field `{k}`"),
                })
        };
        chunks.push(Chunk {
            book_id: field("book_id")?,
            index: num("index")?,
            start_token: num("start_token")?,
            prefix_ids: Vec::new(),
            target_ids: Vec::new(),
            prefix_text: field("prefix_text")?,
            target_text: field("target_text")?,
        });
    }
    Ok(chunks)
}
