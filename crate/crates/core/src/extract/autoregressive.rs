//! Autoregressive reconstruction: seed with true tokens once, then feed the
//! model its own output to extend the text.

use super::client::{complete, Prompt};
use super::{now_rfc3339, EndpointConfig, ExtractError, GenMode, GenerationRecord};
use crate::chunking::ChunkSpec;
use crate::corpus::BookRecord;
use crate::tokenize::Tokenizer;

/// Result of an autoregressive run. A step failure still yields the record
/// built from the steps that completed, flagged truncated, with the error
/// alongside so callers can surface it.
#[derive(Debug)]
pub struct ArOutcome {
    pub record: GenerationRecord,
    pub error: Option<ExtractError>,
}

/// Reconstruct a book from its first `prefix_len` trimmed tokens.
///
/// Each step asks the endpoint for `target_len` new tokens; the next context
/// is the most recent `prefix_len` tokens of (seed ++ transcript). The run
/// stops after `max_steps`, when the transcript covers the remaining book
/// (the final step is truncated to that budget), or when a step yields no
/// tokens at all.
pub fn run_autoregressive(
    cfg: &EndpointConfig,
    book: &BookRecord,
    tok: &dyn Tokenizer,
    spec: &ChunkSpec,
    max_steps: usize,
) -> Result<ArOutcome, ExtractError> {
    let seq = tok.encode(&book.trimmed_text)?;
    if seq.len() < spec.prefix_len {
        return Err(ExtractError::BookTooShort {
            book_id: book.book_id.clone(),
            tokens: seq.len(),
            needed: spec.prefix_len,
        });
    }
    let seed = &seq.ids[..spec.prefix_len];
    let budget = seq.len() - spec.prefix_len;

    let mut per_step = cfg.clone();
    per_step.max_new_tokens = spec.target_len;
    let fingerprint = cfg.fingerprint();

    let mut transcript: Vec<u32> = Vec::new();
    let mut steps = 0usize;
    let mut truncated = false;
    let mut step_error = None;

    while steps < max_steps && transcript.len() < budget {
        let pool_len = seed.len() + transcript.len();
        let start = pool_len - spec.prefix_len;
        let context: Vec<u32> = seed
            .iter()
            .chain(transcript.iter())
            .skip(start)
            .copied()
            .collect();
        let prompt_text = tok.decode(&context)?;
        let prompt = Prompt::for_mode(&per_step, prompt_text);

        let raw = match complete(&per_step, &prompt) {
            Ok(raw) => raw,
            Err(e) => {
                truncated = true;
                step_error = Some(e);
                break;
            }
        };
        let step_ids = tok.encode(&raw)?.ids;
        let take = spec.target_len.min(budget - transcript.len());
        let kept = &step_ids[..step_ids.len().min(take)];
        if kept.is_empty() {
            log::warn!(
                "autoregressive step {steps} for {} produced no tokens; stopping",
                book.book_id
            );
            truncated = true;
            break;
        }
        transcript.extend_from_slice(kept);
        steps += 1;
    }

    let generated_text = tok.decode(&transcript)?;
    let record = GenerationRecord {
        book_id: book.book_id.clone(),
        chunk_index: None,
        run_index: 0,
        mode: GenMode::Autoregressive,
        prompt_mode: cfg.mode,
        generated_text,
        raw_completion: None,
        generated_ids: transcript,
        steps_completed: Some(steps),
        truncated,
        endpoint_fingerprint: fingerprint,
        timestamp: now_rfc3339(),
    };
    Ok(ArOutcome {
        record,
        error: step_error,
    })
}
