//! Scoring generations against ground truth and aggregating per-book medians.

use std::collections::HashMap;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::similarity;
use crate::chunking::{Chunk, ChunkSpec};
use crate::corpus::Catalog;
use crate::extract::{GenMode, GenerationRecord};
use crate::tokenize::{TokenizeError, Tokenizer};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("record for {book_id} chunk {chunk:?} has no matching {expected}")]
    UnmatchedRecord {
        book_id: String,
        chunk: Option<usize>,
        expected: &'static str,
    },
    #[error("model-token granularity requires a tokenizer")]
    TokenizerRequired,
    #[error("tokenizer failure: {0}")]
    Tokenize(#[from] TokenizeError),
    #[error("score io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed {what} at line {line}: {message}")]
    Malformed {
        what: &'static str,
        line: usize,
        message: String,
    },
}

/// Unit of comparison for all six metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Whitespace-split words of the detokenized text (the default).
    #[default]
    Word,
    /// Token ids under the configured tokenizer.
    ModelToken,
    /// Unicode scalar values.
    Character,
}

impl Granularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::Word => "word",
            Granularity::ModelToken => "model-token",
            Granularity::Character => "character",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "word" => Some(Granularity::Word),
            "model-token" | "model_token" => Some(Granularity::ModelToken),
            "character" => Some(Granularity::Character),
            _ => None,
        }
    }
}

/// Split text into comparison units.
pub fn units(
    text: &str,
    granularity: Granularity,
    tok: Option<&dyn Tokenizer>,
) -> Result<Vec<String>, ScoreError> {
    match granularity {
        Granularity::Word => Ok(text.split_whitespace().map(str::to_string).collect()),
        Granularity::Character => Ok(text.chars().map(String::from).collect()),
        Granularity::ModelToken => {
            let tok = tok.ok_or(ScoreError::TokenizerRequired)?;
            Ok(tok
                .encode(text)?
                .ids
                .iter()
                .map(|id| id.to_string())
                .collect())
        }
    }
}

/// The six similarity values for one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub jaccard: f64,
    pub cosine: f64,
    pub levenshtein: f64,
    pub seq_matcher: f64,
    pub bleu: f64,
    pub rouge_l: f64,
}

impl MetricValues {
    pub fn get(&self, metric: MetricName) -> f64 {
        match metric {
            MetricName::Jaccard => self.jaccard,
            MetricName::Cosine => self.cosine,
            MetricName::Levenshtein => self.levenshtein,
            MetricName::SeqMatcher => self.seq_matcher,
            MetricName::Bleu => self.bleu,
            MetricName::RougeL => self.rouge_l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Jaccard,
    Cosine,
    Levenshtein,
    SeqMatcher,
    Bleu,
    RougeL,
}

impl MetricName {
    pub const ALL: [MetricName; 6] = [
        MetricName::Jaccard,
        MetricName::Cosine,
        MetricName::Levenshtein,
        MetricName::SeqMatcher,
        MetricName::Bleu,
        MetricName::RougeL,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::Jaccard => "jaccard",
            MetricName::Cosine => "cosine",
            MetricName::Levenshtein => "levenshtein",
            MetricName::SeqMatcher => "seq_matcher",
            MetricName::Bleu => "bleu",
            MetricName::RougeL => "rouge_l",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MetricName::ALL.iter().copied().find(|m| m.as_str() == s)
    }
}

/// Six similarity scores for one generation vs its ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub book_id: String,
    /// Chunk ordinal for piecewise records; run ordinal for autoregressive.
    pub chunk_index: usize,
    pub scores: MetricValues,
}

/// Score one (hypothesis, reference) text pair on all six metrics.
pub fn score_pair(
    hypothesis: &str,
    reference: &str,
    granularity: Granularity,
    tok: Option<&dyn Tokenizer>,
) -> Result<MetricValues, ScoreError> {
    let h = units(hypothesis, granularity, tok)?;
    let r = units(reference, granularity, tok)?;
    Ok(MetricValues {
        jaccard: similarity::jaccard(&h, &r),
        cosine: similarity::cosine(&h, &r),
        levenshtein: similarity::levenshtein_sim(&h, &r),
        seq_matcher: similarity::seq_matcher(&h, &r),
        bleu: similarity::bleu(&h, &r),
        rouge_l: similarity::rouge_l(&h, &r),
    })
}

/// Score a batch of generation records.
///
/// Piecewise records compare against their chunk's target text.
/// Autoregressive records compare the entire transcript against the whole
/// ground-truth continuation: the trimmed token stream from `prefix_len`
/// onward. Output is ordered by (book_id, chunk_index).
pub fn score_all(
    records: &[GenerationRecord],
    chunks: &[Chunk],
    catalog: &Catalog,
    tok: &dyn Tokenizer,
    spec: &ChunkSpec,
    granularity: Granularity,
) -> Result<Vec<ScoreRecord>, ScoreError> {
    let by_key: HashMap<(&str, usize), &Chunk> = chunks
        .iter()
        .map(|c| ((c.book_id.as_str(), c.index), c))
        .collect();
    let mut ar_truth: HashMap<&str, String> = HashMap::new();

    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let reference = match record.mode {
            GenMode::Piecewise => {
                let chunk_index =
                    record
                        .chunk_index
                        .ok_or_else(|| ScoreError::UnmatchedRecord {
                            book_id: record.book_id.clone(),
                            chunk: None,
                            expected: "chunk index",
                        })?;
                let chunk = by_key
                    .get(&(record.book_id.as_str(), chunk_index))
                    .ok_or_else(|| ScoreError::UnmatchedRecord {
                        book_id: record.book_id.clone(),
                        chunk: Some(chunk_index),
                        expected: "chunk",
                    })?;
                chunk.target_text.clone()
            }
            GenMode::Autoregressive => {
                if let Some(truth) = ar_truth.get(record.book_id.as_str()) {
                    truth.clone()
                } else {
                    let book = catalog.get(&record.book_id).ok_or_else(|| {
                        ScoreError::UnmatchedRecord {
                            book_id: record.book_id.clone(),
                            chunk: None,
                            expected: "book",
                        }
                    })?;
                    let seq = tok.encode(&book.trimmed_text)?;
                    let truth = if seq.len() > spec.prefix_len {
                        tok.decode(&seq.ids[spec.prefix_len..])?
                    } else {
                        String::new()
                    };
                    ar_truth.insert(&record.book_id, truth.clone());
                    truth
                }
            }
        };
        let scores = score_pair(&record.generated_text, &reference, granularity, Some(tok))?;
        out.push(ScoreRecord {
            book_id: record.book_id.clone(),
            chunk_index: record.chunk_index.unwrap_or(record.run_index),
            scores,
        });
    }
    out.sort_by(|a, b| (&a.book_id, a.chunk_index).cmp(&(&b.book_id, b.chunk_index)));
    Ok(out)
}

/// Per-book aggregation carrying the popularity metadata used downstream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BookSummary {
    pub book_id: String,
    pub title: String,
    pub ratings_count: u64,
    pub post_cutoff: bool,
    pub n_scored: usize,
    pub medians: MetricValues,
}

/// Median with the even-count convention: mean of the two middle values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Per-book median of each metric, in catalog order.
///
/// Books with zero scores are excluded with a warning; scores naming a book
/// missing from the catalog are an error.
pub fn summarize(scores: &[ScoreRecord], catalog: &Catalog) -> Result<Vec<BookSummary>, ScoreError> {
    for s in scores {
        if catalog.get(&s.book_id).is_none() {
            return Err(ScoreError::UnmatchedRecord {
                book_id: s.book_id.clone(),
                chunk: Some(s.chunk_index),
                expected: "catalog book",
            });
        }
    }
    let mut grouped: HashMap<&str, Vec<&ScoreRecord>> = HashMap::new();
    for s in scores {
        grouped.entry(s.book_id.as_str()).or_default().push(s);
    }
    let mut out = Vec::new();
    for book in &catalog.books {
        let Some(book_scores) = grouped.get(book.book_id.as_str()) else {
            log::warn!("book {} has zero scores; excluded from summary", book.book_id);
            continue;
        };
        let pick = |f: fn(&MetricValues) -> f64| -> f64 {
            let vals: Vec<f64> = book_scores.iter().map(|s| f(&s.scores)).collect();
            median(&vals)
        };
        out.push(BookSummary {
            book_id: book.book_id.clone(),
            title: book.title.clone(),
            ratings_count: book.ratings_count,
            post_cutoff: book.post_cutoff,
            n_scored: book_scores.len(),
            medians: MetricValues {
                jaccard: pick(|m| m.jaccard),
                cosine: pick(|m| m.cosine),
                levenshtein: pick(|m| m.levenshtein),
                seq_matcher: pick(|m| m.seq_matcher),
                bleu: pick(|m| m.bleu),
                rouge_l: pick(|m| m.rouge_l),
            },
        });
    }
    Ok(out)
}

/// Provenance line embedded at the top of every CSV artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactMeta {
    pub fingerprint: String,
    pub granularity: Granularity,
}

impl ArtifactMeta {
    fn comment_line(&self) -> String {
        format!(
            "# memprobe fingerprint={} granularity={}\n",
            self.fingerprint,
            self.granularity.as_str()
        )
    }

    fn parse_comment(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# memprobe ")?;
        let mut fingerprint = None;
        let mut granularity = None;
        for part in rest.split_whitespace() {
            if let Some(v) = part.strip_prefix("fingerprint=") {
                fingerprint = Some(v.to_string());
            } else if let Some(v) = part.strip_prefix("granularity=") {
                granularity = Granularity::parse(v);
            }
        }
        Some(ArtifactMeta {
            fingerprint: fingerprint?,
            granularity: granularity?,
        })
    }
}

pub const SCORES_CSV_HEADER: &str =
    "book_id,chunk_index,jaccard,cosine,levenshtein,seq_matcher,bleu,rouge_l";

/// Write scores as CSV: provenance comment, fixed header, six-decimal values.
pub fn write_scores_csv<W: io::Write>(
    scores: &[ScoreRecord],
    meta: &ArtifactMeta,
    mut writer: W,
) -> Result<(), ScoreError> {
    writer.write_all(meta.comment_line().as_bytes())?;
    writer.write_all(SCORES_CSV_HEADER.as_bytes())?;
    writer.write_all(b"\n")?;
    for s in scores {
        writeln!(
            writer,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.book_id,
            s.chunk_index,
            s.scores.jaccard,
            s.scores.cosine,
            s.scores.levenshtein,
            s.scores.seq_matcher,
            s.scores.bleu,
            s.scores.rouge_l
        )?;
    }
    Ok(())
}

pub fn read_scores_csv<R: io::BufRead>(
    reader: R,
) -> Result<(Vec<ScoreRecord>, Option<ArtifactMeta>), ScoreError> {
    let mut meta = None;
    let mut scores = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') {
            if meta.is_none() {
                meta = ArtifactMeta::parse_comment(&line);
            }
            continue;
        }
        if !saw_header {
            if line != SCORES_CSV_HEADER {
                return Err(ScoreError::Malformed {
                    what: "scores csv",
                    line: i + 1,
                    message: "unexpected header".to_string(),
                });
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(ScoreError::Malformed {
                what: "scores csv",
                line: i + 1,
                message: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let num = |s: &str, what: &'static str| -> Result<f64, ScoreError> {
            s.parse::<f64>().map_err(|e| ScoreError::Malformed {
                what,
                line: i + 1,
                message: e.to_string(),
            })
        };
        scores.push(ScoreRecord {
            book_id: fields[0].to_string(),
            chunk_index: fields[1].parse().map_err(|_| ScoreError::Malformed {
                what: "scores csv",
                line: i + 1,
                message: "bad chunk_index".to_string(),
            })?,
            scores: MetricValues {
                jaccard: num(fields[2], "scores csv")?,
                cosine: num(fields[3], "scores csv")?,
                levenshtein: num(fields[4], "scores csv")?,
                seq_matcher: num(fields[5], "scores csv")?,
                bleu: num(fields[6], "scores csv")?,
                rouge_l: num(fields[7], "scores csv")?,
            },
        });
    }
    Ok((scores, meta))
}

pub const SUMMARIES_CSV_HEADER: &str = "book_id,title,ratings,post_cutoff,n_chunks,median_jaccard,median_cosine,median_levenshtein,median_seq_matcher,median_bleu,median_rouge_l";

pub fn write_summaries_csv<W: io::Write>(
    summaries: &[BookSummary],
    meta: &ArtifactMeta,
    mut writer: W,
) -> Result<(), ScoreError> {
    writer.write_all(meta.comment_line().as_bytes())?;
    writer.write_all(SUMMARIES_CSV_HEADER.as_bytes())?;
    writer.write_all(b"\n")?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(&mut writer);
    for s in summaries {
        w.write_record([
            s.book_id.as_str(),
            s.title.as_str(),
            &s.ratings_count.to_string(),
            &s.post_cutoff.to_string(),
            &s.n_scored.to_string(),
            &format!("{:.6}", s.medians.jaccard),
            &format!("{:.6}", s.medians.cosine),
            &format!("{:.6}", s.medians.levenshtein),
            &format!("{:.6}", s.medians.seq_matcher),
            &format!("{:.6}", s.medians.bleu),
            &format!("{:.6}", s.medians.rouge_l),
        ])
        .map_err(|e| ScoreError::Malformed {
            what: "summaries csv",
            line: 0,
            message: e.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summaries_csv<R: io::BufRead>(
    mut reader: R,
) -> Result<(Vec<BookSummary>, Option<ArtifactMeta>), ScoreError> {
    let mut content = String::new();
    reader.read_to_string(&mut content)?;
    let mut meta = None;
    let mut body = String::new();
    for line in content.lines() {
        if line.starts_with('#') {
            if meta.is_none() {
                meta = ArtifactMeta::parse_comment(line);
            }
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| ScoreError::Malformed {
            what: "summaries csv",
            line: i + 2,
            message: e.to_string(),
        })?;
        let get = |idx: usize| -> Result<&str, ScoreError> {
            record.get(idx).ok_or(ScoreError::Malformed {
                what: "summaries csv",
                line: i + 2,
                message: format!("missing field {idx}"),
            })
        };
        let fnum = |idx: usize| -> Result<f64, ScoreError> {
            get(idx)?.parse::<f64>().map_err(|e| ScoreError::Malformed {
                what: "summaries csv",
                line: i + 2,
                message: e.to_string(),
            })
        };
        out.push(BookSummary {
            book_id: get(0)?.to_string(),
            title: get(1)?.to_string(),
            ratings_count: get(2)?.parse().map_err(|_| ScoreError::Malformed {
                what: "summaries csv",
                line: i + 2,
                message: "bad ratings".to_string(),
            })?,
            post_cutoff: get(3)? == "true",
            n_scored: get(4)?.parse().map_err(|_| ScoreError::Malformed {
                what: "summaries csv",
                line: i + 2,
                message: "bad n_chunks".to_string(),
            })?,
            medians: MetricValues {
                jaccard: fnum(5)?,
                cosine: fnum(6)?,
                levenshtein: fnum(7)?,
                seq_matcher: fnum(8)?,
                bleu: fnum(9)?,
                rouge_l: fnum(10)?,
            },
        });
    }
    Ok((out, meta))
}
