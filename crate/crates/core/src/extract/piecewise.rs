//! Piecewise extraction: one completion per chunk with bounded concurrency,
//! resume support, and order-restoring assembly.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use super::client::{complete, Prompt};
use super::{now_rfc3339, EndpointConfig, ExtractError, GenMode, GenerationRecord};
use crate::chunking::Chunk;
use crate::tokenize::Tokenizer;

/// Append-only record journal; doubles as the resume manifest.
///
/// Re-running a piecewise extraction against the same journal skips every
/// (book_id, chunk_index) already present.
pub struct RunJournal {
    path: PathBuf,
    completed: BTreeMap<(String, usize), GenerationRecord>,
}

impl RunJournal {
    pub fn open(path: &Path) -> Result<Self, ExtractError> {
        let mut completed = BTreeMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|source| ExtractError::Journal {
                path: path.to_path_buf(),
                source,
            })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| ExtractError::Journal {
                    path: path.to_path_buf(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: GenerationRecord =
                    serde_json::from_str(&line).map_err(|e| ExtractError::JournalParse {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                if let Some(index) = record.chunk_index {
                    completed.insert((record.book_id.clone(), index), record);
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            completed,
        })
    }

    pub fn contains(&self, book_id: &str, index: usize) -> bool {
        self.completed
            .contains_key(&(book_id.to_string(), index))
    }

    pub fn len(&self) -> usize {
        self.completed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completed.is_empty()
    }

    fn append(&mut self, record: &GenerationRecord) -> Result<(), ExtractError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|source| ExtractError::Journal {
                path: self.path.clone(),
                source,
            })?;
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(file, "{line}").map_err(|source| ExtractError::Journal {
            path: self.path.clone(),
            source,
        })?;
        if let Some(index) = record.chunk_index {
            self.completed
                .insert((record.book_id.clone(), index), record.clone());
        }
        Ok(())
    }
}

/// Run one completion per chunk and return records ordered by
/// (book_id, chunk_index) regardless of completion order.
///
/// `max_in_flight` requests run concurrently. On the first failure no new
/// work starts, everything already completed is persisted to the journal,
/// and the error names the failing chunk.
pub fn run_piecewise(
    cfg: &EndpointConfig,
    chunks: &[Chunk],
    tok: &dyn Tokenizer,
    mut journal: Option<&mut RunJournal>,
) -> Result<Vec<GenerationRecord>, ExtractError> {
    let mut order: Vec<&Chunk> = chunks.iter().collect();
    order.sort_by(|a, b| (&a.book_id, a.index).cmp(&(&b.book_id, b.index)));

    let todo: Vec<&Chunk> = order
        .iter()
        .copied()
        .filter(|c| {
            journal
                .as_ref()
                .map_or(true, |j| !j.contains(&c.book_id, c.index))
        })
        .collect();

    let fingerprint = cfg.fingerprint();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<String, ExtractError>)>();

    let workers = cfg.max_in_flight.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let abort = &abort;
            let todo = &todo;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= todo.len() || abort.load(Ordering::SeqCst) {
                    break;
                }
                let chunk = todo[i];
                let mut per_chunk = cfg.clone();
                per_chunk.max_new_tokens = chunk_target_len(chunk);
                let prompt = Prompt::for_mode(&per_chunk, chunk.prefix_text.clone());
                let result = complete(&per_chunk, &prompt);
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut raw_results: Vec<Option<String>> = vec![None; todo.len()];
        let mut first_error: Option<(usize, ExtractError)> = None;
        for (i, result) in rx {
            match result {
                Ok(text) => raw_results[i] = Some(text),
                Err(e) => {
                    if first_error.as_ref().map_or(true, |(j, _)| i < *j) {
                        first_error = Some((i, e));
                    }
                }
            }
        }

        // Assemble in order on this thread so re-encoding is deterministic,
        // persisting everything that completed before reporting any failure.
        let mut new_records: BTreeMap<(String, usize), GenerationRecord> = BTreeMap::new();
        for (i, raw) in raw_results.into_iter().enumerate() {
            let Some(raw) = raw else { continue };
            let chunk = todo[i];
            let record = build_piecewise_record(cfg, &fingerprint, chunk, raw, tok)?;
            if let Some(j) = journal.as_deref_mut() {
                j.append(&record)?;
            }
            new_records.insert((chunk.book_id.clone(), chunk.index), record);
        }

        if let Some((i, source)) = first_error {
            let chunk = todo[i];
            return Err(ExtractError::ChunkFailed {
                book_id: chunk.book_id.clone(),
                index: chunk.index,
                source: Box::new(source),
            });
        }

        let mut out = Vec::with_capacity(order.len());
        for chunk in &order {
            let key = (chunk.book_id.clone(), chunk.index);
            if let Some(r) = new_records.remove(&key) {
                out.push(r);
            } else if let Some(j) = journal.as_deref() {
                out.push(
                    j.completed
                        .get(&key)
                        .expect("journal holds every skipped chunk")
                        .clone(),
                );
            }
        }
        Ok(out)
    })
}

fn chunk_target_len(chunk: &Chunk) -> usize {
    if chunk.target_ids.is_empty() {
        chunk.target_text.split_whitespace().count().max(1)
    } else {
        chunk.target_ids.len()
    }
}

fn build_piecewise_record(
    cfg: &EndpointConfig,
    fingerprint: &str,
    chunk: &Chunk,
    raw: String,
    tok: &dyn Tokenizer,
) -> Result<GenerationRecord, ExtractError> {
    let target_len = chunk_target_len(chunk);
    let seq = tok.encode(&raw)?;
    let kept = &seq.ids[..seq.ids.len().min(target_len)];
    let generated_text = tok.decode(kept)?;
    let raw_completion = if generated_text == raw { None } else { Some(raw) };
    Ok(GenerationRecord {
        book_id: chunk.book_id.clone(),
        chunk_index: Some(chunk.index),
        run_index: 0,
        mode: GenMode::Piecewise,
        prompt_mode: cfg.mode,
        generated_text,
        raw_completion,
        generated_ids: kept.to_vec(),
        steps_completed: None,
        truncated: false,
        endpoint_fingerprint: fingerprint.to_string(),
        timestamp: now_rfc3339(),
    })
}

/// Write records as JSONL, one per line.
pub fn write_records_jsonl<W: std::io::Write>(
    records: &[GenerationRecord],
    mut writer: W,
) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a JSONL record stream.
pub fn read_records_jsonl<R: BufRead>(reader: R) -> Result<Vec<GenerationRecord>, ExtractError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ExtractError::Journal {
            path: PathBuf::from("<reader>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| ExtractError::JournalParse {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(records)
}
