//! Artifact layout under the run's output directory, plus load/store helpers
//! shared by the subcommands.
//!
//! Every stage reads the previous stage's artifacts from here and writes its
//! own, so the pipeline can run stage by stage or end to end.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use memprobe_core::chunking::{read_chunk_dump, Chunk};
use memprobe_core::corpus::{BookRecord, Catalog};
use memprobe_core::RunConfig;

pub struct Layout {
    pub out_dir: PathBuf,
}

impl Layout {
    pub fn new(out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn ingest_manifest(&self) -> PathBuf {
        self.out_dir.join("ingest/catalog.json")
    }

    pub fn trimmed_dir(&self) -> PathBuf {
        self.out_dir.join("ingest/trimmed")
    }

    pub fn trimmed_text(&self, book_id: &str) -> PathBuf {
        self.trimmed_dir().join(format!("{book_id}.txt"))
    }

    pub fn chunks_dir(&self) -> PathBuf {
        self.out_dir.join("chunks")
    }

    pub fn chunk_dump(&self, book_id: &str) -> PathBuf {
        self.chunks_dir().join(format!("{book_id}.jsonl"))
    }

    pub fn chunk_stats(&self) -> PathBuf {
        self.chunks_dir().join("stats.json")
    }

    pub fn records(&self) -> PathBuf {
        self.out_dir.join("extract/records.jsonl")
    }

    pub fn run_manifest(&self) -> PathBuf {
        self.out_dir.join("extract/manifest.json")
    }

    pub fn ar_records(&self) -> PathBuf {
        self.out_dir.join("extract/ar_records.jsonl")
    }

    pub fn scores_csv(&self) -> PathBuf {
        self.out_dir.join("scores/scores.csv")
    }

    pub fn ar_scores_csv(&self) -> PathBuf {
        self.out_dir.join("scores/scores_ar.csv")
    }

    pub fn summaries_csv(&self) -> PathBuf {
        self.out_dir.join("scores/summaries.csv")
    }

    pub fn lora_dir(&self) -> PathBuf {
        self.out_dir.join("lora")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }
}

/// Per-book metadata persisted by `ingest`.
#[derive(Debug, Serialize, Deserialize)]
pub struct IngestBook {
    pub book_id: String,
    pub title: String,
    pub author: String,
    pub ratings_count: u64,
    pub gutenberg_added: chrono::NaiveDate,
    pub post_cutoff: bool,
    pub usable: bool,
    pub raw_tokens: usize,
    pub trimmed_tokens: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestManifest {
    pub fingerprint: String,
    pub cutoff_date: chrono::NaiveDate,
    pub books: Vec<IngestBook>,
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut file = fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("mkdir {}", parent.display()))?;
    }
    Ok(())
}

/// Rebuild the in-memory catalog from ingest artifacts. Trimmed texts are
/// loaded only when a stage actually needs them.
pub fn load_ingested_catalog(layout: &Layout, with_texts: bool) -> Result<Catalog> {
    let manifest_path = layout.ingest_manifest();
    let raw = fs::read_to_string(&manifest_path).with_context(|| {
        format!(
            "missing ingest artifact {}; run `memprobe ingest` first",
            manifest_path.display()
        )
    })?;
    let manifest: IngestManifest = serde_json::from_str(&raw)
        .with_context(|| format!("parse {}", manifest_path.display()))?;

    let mut books = Vec::with_capacity(manifest.books.len());
    for b in manifest.books {
        let trimmed_text = if with_texts && b.usable {
            fs::read_to_string(layout.trimmed_text(&b.book_id))
                .with_context(|| format!("missing trimmed text for {}", b.book_id))?
        } else {
            String::new()
        };
        books.push(BookRecord {
            book_id: b.book_id,
            title: b.title,
            author: b.author,
            ratings_count: b.ratings_count,
            gutenberg_added: b.gutenberg_added,
            post_cutoff: b.post_cutoff,
            raw_text: String::new(),
            trimmed_text,
            usable: b.usable,
        });
    }
    Ok(Catalog {
        books,
        cutoff_date: manifest.cutoff_date,
    })
}

pub fn load_ingest_fingerprint(layout: &Layout) -> Result<String> {
    let raw = fs::read_to_string(layout.ingest_manifest())?;
    let manifest: IngestManifest = serde_json::from_str(&raw)?;
    Ok(manifest.fingerprint)
}

/// Load every chunk dump under the chunks directory, sorted per book.
pub fn load_all_chunks(layout: &Layout) -> Result<Vec<Chunk>> {
    let dir = layout.chunks_dir();
    if !dir.exists() {
        bail!(
            "missing chunk artifacts in {}; run `memprobe chunk` first",
            dir.display()
        );
    }
    let mut chunks = Vec::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    for path in paths {
        let file = fs::File::open(&path)?;
        chunks.extend(
            read_chunk_dump(BufReader::new(file))
                .with_context(|| format!("parse {}", path.display()))?,
        );
    }
    Ok(chunks)
}

/// Endpoint base-url precedence: config < MEMPROBE_ENDPOINT < --endpoint.
pub fn apply_endpoint_overrides(config: &mut RunConfig, flag: Option<&str>) {
    if let Ok(env_url) = std::env::var("MEMPROBE_ENDPOINT") {
        if !env_url.is_empty() {
            config.endpoint.base_url = env_url;
        }
    }
    if let Some(url) = flag {
        config.endpoint.base_url = url.to_string();
    }
}
