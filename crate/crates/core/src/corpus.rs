//! Book catalog ingestion and boilerplate trimming.
//!
//! A catalog is a CSV with header `book_id,title,author,ratings,added_date`
//! plus one UTF-8 text file per book (`<book_id>.txt`) in a text directory.
//! Trimming discards fixed token margins at the head and tail of each book,
//! which is where front matter, licensing text, and tables of contents live.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::{TokenizeError, Tokenizer};

/// Default knowledge cutoff: books added after December 2023 are post-cutoff.
pub const DEFAULT_CUTOFF: &str = "2023-12-31";

pub const DEFAULT_HEAD_TOKENS: usize = 2000;
pub const DEFAULT_TAIL_TOKENS: usize = 5000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed catalog row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("duplicate book_id: {0}")]
    DuplicateBookId(String),
    #[error("missing text: {0}")]
    MissingText(String),
    #[error("tokenizer failure: {0}")]
    Tokenize(#[from] TokenizeError),
}

/// One catalog entry with its raw and trimmed text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BookRecord {
    pub book_id: String,
    pub title: String,
    pub author: String,
    /// Goodreads ratings count; popularity proxy.
    pub ratings_count: u64,
    /// Date the book was first added to Project Gutenberg.
    pub gutenberg_added: NaiveDate,
    /// True iff `gutenberg_added` is after the catalog cutoff date.
    pub post_cutoff: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub trimmed_text: String,
    /// False until trimmed; stays false when trimming leaves no text.
    #[serde(default)]
    pub usable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    pub books: Vec<BookRecord>,
    pub cutoff_date: NaiveDate,
}

impl Catalog {
    pub fn get(&self, book_id: &str) -> Option<&BookRecord> {
        self.books.iter().find(|b| b.book_id == book_id)
    }

    pub fn book_ids(&self) -> impl Iterator<Item = &str> {
        self.books.iter().map(|b| b.book_id.as_str())
    }
}

fn cutoff_date() -> NaiveDate {
    NaiveDate::parse_from_str(DEFAULT_CUTOFF, "%Y-%m-%d").expect("valid constant date")
}

/// Normalize line endings to `\n`. The only text cleanup applied.
fn normalize_text(raw: &str) -> String {
    if raw.contains('\r') {
        raw.replace("\r\n", "\n").replace('\r', "\n")
    } else {
        raw.to_string()
    }
}

/// Load a catalog CSV and the text file of every listed book.
///
/// Preserves catalog file order. Text is normalized but not trimmed;
/// `trimmed_text` stays empty until [`trim_boilerplate`] runs.
pub fn load_catalog(catalog_path: &Path, text_dir: &Path) -> Result<Catalog, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(catalog_path)
        .map_err(|e| csv_open_error(catalog_path, e))?;

    let mut books = Vec::new();
    let mut seen = HashSet::new();
    let cutoff = cutoff_date();

    for result in reader.records() {
        let record = result.map_err(|e| CorpusError::MalformedRow {
            line: csv_error_line(&e),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = CatalogRow::parse(&record, line)?;

        if !seen.insert(row.book_id.clone()) {
            return Err(CorpusError::DuplicateBookId(row.book_id));
        }

        let text_path = text_dir.join(format!("{}.txt", row.book_id));
        let raw = fs::read_to_string(&text_path).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                CorpusError::MissingText(row.book_id.clone())
            } else {
                CorpusError::Io {
                    path: text_path.clone(),
                    source: e,
                }
            }
        })?;

        books.push(BookRecord {
            post_cutoff: row.added_date > cutoff,
            book_id: row.book_id,
            title: row.title,
            author: row.author,
            ratings_count: row.ratings,
            gutenberg_added: row.added_date,
            raw_text: normalize_text(&raw),
            trimmed_text: String::new(),
            usable: false,
        });
    }

    Ok(Catalog {
        books,
        cutoff_date: cutoff,
    })
}

fn csv_open_error(path: &Path, e: csv::Error) -> CorpusError {
    if let csv::ErrorKind::Io(io_err) = e.into_kind() {
        CorpusError::Io {
            path: path.to_path_buf(),
            source: io_err,
        }
    } else {
        CorpusError::MalformedRow {
            line: 0,
            message: "unreadable catalog".to_string(),
        }
    }
}

fn csv_error_line(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p: &csv::Position| p.line())
}

struct CatalogRow {
    book_id: String,
    title: String,
    author: String,
    ratings: u64,
    added_date: NaiveDate,
}

impl CatalogRow {
    fn parse(record: &csv::StringRecord, line: u64) -> Result<Self, CorpusError> {
        let field = |i: usize, name: &str| -> Result<&str, CorpusError> {
            record.get(i).ok_or_else(|| CorpusError::MalformedRow {
                line,
                message: format!("missing field `{name}`"),
            })
        };
        let book_id = field(0, "book_id")?.to_string();
        if book_id.is_empty() {
            return Err(CorpusError::MalformedRow {
                line,
                message: "empty book_id".to_string(),
            });
        }
        let title = field(1, "title")?.to_string();
        let author = field(2, "author")?.to_string();
        let ratings = field(3, "ratings")?
            .parse::<u64>()
            .map_err(|e| CorpusError::MalformedRow {
                line,
                message: format!("bad ratings: {e}"),
            })?;
        let added_date = NaiveDate::parse_from_str(field(4, "added_date")?, "%Y-%m-%d").map_err(
            |e| CorpusError::MalformedRow {
                line,
                message: format!("bad added_date: {e}"),
            },
        )?;
        Ok(Self {
            book_id,
            title,
            author,
            ratings,
            added_date,
        })
    }
}

/// Serialize the catalog metadata back to CSV in canonical form.
///
/// Canonical form uses minimal quoting and ISO-8601 dates, so a catalog
/// written this way loads and re-serializes byte-identically.
pub fn write_catalog_csv<W: io::Write>(catalog: &Catalog, writer: W) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["book_id", "title", "author", "ratings", "added_date"])
        .map_err(csv_write_error)?;
    for book in &catalog.books {
        w.write_record([
            book.book_id.as_str(),
            book.title.as_str(),
            book.author.as_str(),
            &book.ratings_count.to_string(),
            &book.gutenberg_added.format("%Y-%m-%d").to_string(),
        ])
        .map_err(csv_write_error)?;
    }
    w.flush().map_err(|e| CorpusError::Io {
        path: PathBuf::from("<writer>"),
        source: e,
    })?;
    Ok(())
}

fn csv_write_error(e: csv::Error) -> CorpusError {
    CorpusError::MalformedRow {
        line: 0,
        message: format!("csv write: {e}"),
    }
}

/// Discard `head_tokens` from the start and `tail_tokens` from the end of
/// the book, measured with `tok`.
///
/// The trimmed text is the raw-text span covering the retained tokens, so it
/// is always a contiguous substring of `raw_text`. Books with too few tokens
/// end up with empty trimmed text and `usable == false`; that is not an
/// error, reports surface such books explicitly.
pub fn trim_boilerplate(
    book: &mut BookRecord,
    tok: &dyn Tokenizer,
    head_tokens: usize,
    tail_tokens: usize,
) -> Result<(), CorpusError> {
    let seq = tok.encode(&book.raw_text)?;
    let total = seq.len();
    if total <= head_tokens + tail_tokens {
        book.trimmed_text = String::new();
        book.usable = false;
        return Ok(());
    }
    let first = seq.spans[head_tokens].0;
    let last = seq.spans[total - tail_tokens - 1].1;
    book.trimmed_text = book.raw_text[first..last].to_string();
    book.usable = !book.trimmed_text.is_empty();
    Ok(())
}
