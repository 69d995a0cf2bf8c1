//! Supervised-fine-tuning attack datasets: chat-template samples drawn from
//! a training-book collection disjoint from the extraction set.

use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::{make_chunks, Chunk, ChunkSpec};
use crate::corpus::Catalog;
use crate::tokenize::{TokenizeError, Tokenizer};

/// The exact system message every emitted sample carries.
pub const SFT_SYSTEM_PROMPT: &str = "You are a helpful assistant with an incredible memory. You can recall all texts in your training data that start with a given prefix.";

#[derive(Debug, Error)]
pub enum SftError {
    #[error("training and extraction catalogs share book ids: {0}")]
    CatalogOverlap(String),
    #[error("requested {requested} samples but only {available} chunks are available")]
    NotEnoughChunks { requested: usize, available: usize },
    #[error("tokenizer failure: {0}")]
    Tokenize(#[from] TokenizeError),
    #[error("chunking failure: {0}")]
    Chunk(#[from] crate::chunking::ChunkError),
    #[error("sft io: {0}")]
    Io(#[from] io::Error),
}

/// One chat-template training sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftSample {
    pub system: String,
    pub user: String,
    pub assistant: String,
    pub book_id: String,
    pub chunk_index: usize,
}

/// Sample `n_samples` chunks uniformly without replacement from the
/// training catalog, deterministically for a fixed seed.
///
/// When the extraction catalog is supplied, any shared book id is an error;
/// the attack dataset must stay disjoint from the books being probed.
pub fn build_sft_dataset(
    train_catalog: &Catalog,
    extraction_catalog: Option<&Catalog>,
    tok: &dyn Tokenizer,
    spec: &ChunkSpec,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SftSample>, SftError> {
    if let Some(extraction) = extraction_catalog {
        let shared: Vec<&str> = train_catalog
            .book_ids()
            .filter(|id| extraction.get(id).is_some())
            .collect();
        if !shared.is_empty() {
            return Err(SftError::CatalogOverlap(shared.join(", ")));
        }
    }

    let mut all_chunks: Vec<Chunk> = Vec::new();
    for book in &train_catalog.books {
        all_chunks.extend(make_chunks(book, tok, spec)?);
    }
    if n_samples > all_chunks.len() {
        return Err(SftError::NotEnoughChunks {
            requested: n_samples,
            available: all_chunks.len(),
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, all_chunks.len(), n_samples).into_vec();
    picked.sort_unstable();

    Ok(picked
        .into_iter()
        .map(|i| {
            let chunk = &all_chunks[i];
            SftSample {
                system: SFT_SYSTEM_PROMPT.to_string(),
                user: chunk.prefix_text.clone(),
                assistant: chunk.target_text.clone(),
                book_id: chunk.book_id.clone(),
                chunk_index: chunk.index,
            }
        })
        .collect())
}

/// JSONL emission: `{"messages":[system,user,assistant],"meta":{...}}`.
pub fn write_sft_jsonl<W: io::Write>(samples: &[SftSample], mut writer: W) -> Result<(), SftError> {
    for sample in samples {
        let row = serde_json::json!({
            "messages": [
                {"role": "system", "content": sample.system},
                {"role": "user", "content": sample.user},
                {"role": "assistant", "content": sample.assistant},
            ],
            "meta": {"book_id": sample.book_id, "chunk_index": sample.chunk_index},
        });
        serde_json::to_writer(&mut writer, &row)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
