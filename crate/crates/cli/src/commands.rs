//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use memprobe_core::chunking::{chunk_stats, make_chunks, write_chunk_dump};
use memprobe_core::corpus::{load_catalog, trim_boilerplate};
use memprobe_core::extract::{
    read_records_jsonl, run_autoregressive, run_piecewise, write_records_jsonl,
    MockBehavior, MockScript, MockServer, PromptMode, RunJournal,
};
use memprobe_core::lora::{
    audit_adapter_files, write_histogram_csv, write_stats_csv, LayerNameScheme,
};
use memprobe_core::metrics::{
    read_scores_csv, read_summaries_csv, score_all, summarize, write_scores_csv,
    write_summaries_csv, ArtifactMeta, MetricName,
};
use memprobe_core::report::{
    correlate, render_depth_profile, render_histogram, render_scatter, standard_flags,
    CorrMethod, Report, ReportError, REPORT_SCHEMA,
};
use memprobe_core::sft::{build_sft_dataset, write_sft_jsonl};
use memprobe_core::{RunConfig, Tokenizer};

use crate::artifacts::{
    ensure_parent, load_all_chunks, load_ingest_fingerprint, load_ingested_catalog,
    write_json_pretty, IngestBook, IngestManifest, Layout,
};

fn build_tokenizer(config: &RunConfig) -> Result<std::sync::Arc<dyn Tokenizer>> {
    Ok(config.tokenizer.build()?)
}

pub fn ingest(config: &RunConfig) -> Result<()> {
    config.validate_paths()?;
    let layout = Layout::new(&config.out_dir);
    let tok = build_tokenizer(config)?;

    let mut catalog = load_catalog(&config.extraction_catalog, &config.extraction_text_dir)?;
    fs::create_dir_all(layout.trimmed_dir())?;

    let mut books = Vec::with_capacity(catalog.books.len());
    for book in &mut catalog.books {
        let raw_tokens = tok.count(&book.raw_text)?;
        trim_boilerplate(book, tok.as_ref(), config.trim.head_tokens, config.trim.tail_tokens)?;
        let trimmed_tokens = tok.count(&book.trimmed_text)?;
        if book.usable {
            fs::write(layout.trimmed_text(&book.book_id), &book.trimmed_text)?;
        } else {
            log::warn!(
                "book {} is unusable after trimming ({} raw tokens)",
                book.book_id,
                raw_tokens
            );
        }
        books.push(IngestBook {
            book_id: book.book_id.clone(),
            title: book.title.clone(),
            author: book.author.clone(),
            ratings_count: book.ratings_count,
            gutenberg_added: book.gutenberg_added,
            post_cutoff: book.post_cutoff,
            usable: book.usable,
            raw_tokens,
            trimmed_tokens,
        });
    }

    let usable = books.iter().filter(|b| b.usable).count();
    let manifest = IngestManifest {
        fingerprint: config.fingerprint(),
        cutoff_date: catalog.cutoff_date,
        books,
    };
    write_json_pretty(&layout.ingest_manifest(), &manifest)?;
    println!(
        "ingested {} books ({} usable) -> {}",
        manifest.books.len(),
        usable,
        layout.ingest_manifest().display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ChunkStatsFile {
    fingerprint: String,
    total: usize,
    min_per_book: usize,
    max_per_book: usize,
    per_book: BTreeMap<String, usize>,
}

pub fn chunk(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(&config.out_dir);
    let tok = build_tokenizer(config)?;
    let catalog = load_ingested_catalog(&layout, true)?;
    fs::create_dir_all(layout.chunks_dir())?;

    let mut per_book = BTreeMap::new();
    let mut counts = Vec::new();
    for book in &catalog.books {
        if !book.usable {
            continue;
        }
        let chunks = make_chunks(book, tok.as_ref(), &config.chunk)?;
        let file = fs::File::create(layout.chunk_dump(&book.book_id))?;
        write_chunk_dump(&chunks, BufWriter::new(file))?;
        per_book.insert(book.book_id.clone(), chunks.len());
        counts.push(chunks.len());
    }
    let stats = chunk_stats(&counts);
    write_json_pretty(
        &layout.chunk_stats(),
        &ChunkStatsFile {
            fingerprint: config.fingerprint(),
            total: stats.total,
            min_per_book: stats.min_per_book,
            max_per_book: stats.max_per_book,
            per_book,
        },
    )?;
    println!(
        "chunked {} books: {} chunks total (min {}, max {})",
        counts.len(),
        stats.total,
        stats.min_per_book,
        stats.max_per_book
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    fingerprint: String,
    endpoint_fingerprint: String,
    completed: usize,
    total: usize,
}

pub fn extract(config: &RunConfig, mode: Option<PromptMode>, fresh: bool) -> Result<()> {
    let layout = Layout::new(&config.out_dir);
    let tok = build_tokenizer(config)?;
    let chunks = load_all_chunks(&layout)?;
    if chunks.is_empty() {
        bail!("no chunks to extract; did `memprobe chunk` produce anything?");
    }

    let mut endpoint = config.endpoint.clone();
    if let Some(mode) = mode {
        endpoint.mode = mode;
    }

    let journal_path = layout.records();
    ensure_parent(&journal_path)?;
    if fresh && journal_path.exists() {
        fs::remove_file(&journal_path)?;
    }
    let mut journal = RunJournal::open(&journal_path)?;
    let already = journal.len();
    if already > 0 {
        log::info!("resuming: {already} chunks already completed");
    }

    let result = run_piecewise(&endpoint, &chunks, tok.as_ref(), Some(&mut journal));
    write_json_pretty(
        &layout.run_manifest(),
        &RunManifest {
            fingerprint: config.fingerprint(),
            endpoint_fingerprint: endpoint.fingerprint(),
            completed: journal.len(),
            total: chunks.len(),
        },
    )?;
    let records = result?;

    // The journal is append-ordered; the final artifact is (book, index) ordered.
    let file = fs::File::create(&journal_path)?;
    write_records_jsonl(&records, BufWriter::new(file))?;
    println!(
        "extracted {} records ({} reused from journal) -> {}",
        records.len(),
        already,
        journal_path.display()
    );
    Ok(())
}

pub fn extract_ar(config: &RunConfig, book_id: &str, max_steps: usize) -> Result<()> {
    let layout = Layout::new(&config.out_dir);
    let tok = build_tokenizer(config)?;
    let catalog = load_ingested_catalog(&layout, true)?;
    let book = catalog
        .get(book_id)
        .with_context(|| format!("book {book_id} not in the ingested catalog"))?;
    if !book.usable {
        bail!("book {book_id} is flagged unusable");
    }

    let outcome = run_autoregressive(&config.endpoint, book, tok.as_ref(), &config.chunk, max_steps)?;
    let mut record = outcome.record;

    let path = layout.ar_records();
    ensure_parent(&path)?;
    let existing = if path.exists() {
        read_records_jsonl(BufReader::new(fs::File::open(&path)?))?
    } else {
        Vec::new()
    };
    record.run_index = existing
        .iter()
        .filter(|r| r.book_id == record.book_id)
        .count();
    let mut file = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    serde_json::to_writer(&mut file, &record)?;
    file.write_all(b"\n")?;

    println!(
        "autoregressive run for {book_id}: {} steps, {} tokens{} -> {}",
        record.steps_completed.unwrap_or(0),
        record.generated_ids.len(),
        if record.truncated { " (truncated)" } else { "" },
        path.display()
    );
    if let Some(err) = outcome.error {
        bail!("autoregressive run stopped early: {err}");
    }
    Ok(())
}

pub fn score(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(&config.out_dir);
    let tok = build_tokenizer(config)?;
    let chunks = load_all_chunks(&layout)?;
    let catalog = load_ingested_catalog(&layout, true)?;
    let meta = ArtifactMeta {
        fingerprint: config.fingerprint(),
        granularity: config.granularity,
    };

    let mut wrote = Vec::new();
    for (records_path, scores_path, what) in [
        (layout.records(), layout.scores_csv(), "piecewise"),
        (layout.ar_records(), layout.ar_scores_csv(), "autoregressive"),
    ] {
        if !records_path.exists() {
            continue;
        }
        let records = read_records_jsonl(BufReader::new(fs::File::open(&records_path)?))?;
        if records.is_empty() {
            continue;
        }
        let scores = score_all(
            &records,
            &chunks,
            &catalog,
            tok.as_ref(),
            &config.chunk,
            config.granularity,
        )?;
        ensure_parent(&scores_path)?;
        let file = fs::File::create(&scores_path)?;
        write_scores_csv(&scores, &meta, BufWriter::new(file))?;
        println!("scored {} {what} records -> {}", scores.len(), scores_path.display());
        wrote.push(what);
    }
    if wrote.is_empty() {
        bail!("no generation records found; run `memprobe extract` or `extract-ar` first");
    }
    Ok(())
}

pub fn summarize_cmd(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(&config.out_dir);
    let catalog = load_ingested_catalog(&layout, false)?;
    let scores_path = layout.scores_csv();
    let file = fs::File::open(&scores_path)
        .with_context(|| format!("missing {}; run `memprobe score` first", scores_path.display()))?;
    let (scores, meta) = read_scores_csv(BufReader::new(file))?;
    let meta = meta.with_context(|| "scores csv carries no provenance line")?;

    let summaries = summarize(&scores, &catalog)?;
    let path = layout.summaries_csv();
    let out = fs::File::create(&path)?;
    write_summaries_csv(&summaries, &meta, BufWriter::new(out))?;
    println!("summarized {} books -> {}", summaries.len(), path.display());
    Ok(())
}

pub fn sft_prep(config: &RunConfig, samples: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    let (Some(train_catalog_path), Some(train_text_dir)) =
        (&config.training_catalog, &config.training_text_dir)
    else {
        bail!("config needs training_catalog and training_text_dir for sft-prep");
    };
    let tok = build_tokenizer(config)?;

    let mut train = load_catalog(train_catalog_path, train_text_dir)?;
    for book in &mut train.books {
        trim_boilerplate(book, tok.as_ref(), config.trim.head_tokens, config.trim.tail_tokens)?;
    }
    let extraction = load_catalog(&config.extraction_catalog, &config.extraction_text_dir)?;

    let seed = seed.unwrap_or(config.seed);
    let dataset = build_sft_dataset(
        &train,
        Some(&extraction),
        tok.as_ref(),
        &config.chunk,
        samples,
        seed,
    )?;
    ensure_parent(out)?;
    let file = fs::File::create(out)?;
    write_sft_jsonl(&dataset, BufWriter::new(file))?;

    // Sidecar provenance; the dataset itself stays in plain trainer-ready shape.
    let manifest_path = out.with_extension("manifest.json");
    write_json_pretty(
        &manifest_path,
        &serde_json::json!({
            "fingerprint": config.fingerprint(),
            "samples": samples,
            "seed": seed,
            "system_prompt": memprobe_core::sft::SFT_SYSTEM_PROMPT,
        }),
    )?;
    println!("wrote {} sft samples (seed {seed}) -> {}", dataset.len(), out.display());
    Ok(())
}

pub struct LoraAuditArgs {
    pub base: PathBuf,
    pub adapter: PathBuf,
    pub alpha: Option<f64>,
    pub rank: Option<usize>,
    pub layer_map: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

pub fn lora_audit(config: Option<&RunConfig>, args: &LoraAuditArgs) -> Result<()> {
    let scheme = match &args.layer_map {
        Some(path) => LayerNameScheme::from_mapping_file(path)?,
        None => LayerNameScheme::default_llama(),
    };
    let report = audit_adapter_files(&args.base, &args.adapter, args.alpha, args.rank, &scheme)?;

    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| config.map(|c| Layout::new(&c.out_dir).lora_dir()))
        .unwrap_or_else(|| PathBuf::from("lora-audit"));
    fs::create_dir_all(&out_dir)?;
    let fingerprint = config
        .map(|c| c.fingerprint())
        .unwrap_or_else(|| "standalone".to_string());

    let stats_path = out_dir.join("stats.csv");
    write_stats_csv(&report.stats, &fingerprint, fs::File::create(&stats_path)?)?;
    let hist_path = out_dir.join("histogram.csv");
    write_histogram_csv(&report.global, &fingerprint, fs::File::create(&hist_path)?)?;
    fs::write(
        out_dir.join("depth_profile.svg"),
        render_depth_profile(&report.profile),
    )?;
    fs::write(out_dir.join("histogram.svg"), render_histogram(&report.global))?;

    println!(
        "audited {} adapter pairs (alpha {}, rank {}): frac>0.01 = {:.4}, frac>1.0 = {:.6} -> {}",
        report.stats.len(),
        report.alpha,
        report.rank,
        report.global.frac_gt_001,
        report.global.frac_gt_1,
        out_dir.display()
    );
    Ok(())
}

pub fn report_cmd(config: &RunConfig, force: bool) -> Result<()> {
    let layout = Layout::new(&config.out_dir);
    let fingerprint = config.fingerprint();

    let summaries_path = layout.summaries_csv();
    let file = fs::File::open(&summaries_path).with_context(|| {
        format!(
            "missing {}; run `memprobe summarize` first",
            summaries_path.display()
        )
    })?;
    let (summaries, summaries_meta) = read_summaries_csv(BufReader::new(file))?;

    // Refuse to mix artifacts produced under different configurations.
    let check = |name: &str, other: Option<String>| -> Result<()> {
        if let Some(other) = other {
            if other != fingerprint && !force {
                return Err(ReportError::FingerprintMismatch {
                    what: name.to_string(),
                    left: fingerprint.clone(),
                    right: other,
                }
                .into());
            }
        }
        Ok(())
    };
    check("summaries", summaries_meta.as_ref().map(|m| m.fingerprint.clone()))?;
    if layout.scores_csv().exists() {
        let (_, meta) = read_scores_csv(BufReader::new(fs::File::open(layout.scores_csv())?))?;
        check("scores", meta.map(|m| m.fingerprint))?;
    }
    if let Ok(ingest_fp) = load_ingest_fingerprint(&layout) {
        check("ingest", Some(ingest_fp))?;
    }

    let mut correlations = Vec::new();
    let mut flags = standard_flags(
        config.endpoint.system_prompt != memprobe_core::sft::SFT_SYSTEM_PROMPT,
    );
    for metric in MetricName::ALL {
        for method in CorrMethod::ALL {
            match correlate(&summaries, metric, method) {
                Ok(result) => correlations.push(result),
                Err(ReportError::DegenerateSeries) => flags.push(format!(
                    "correlation skipped for {} ({}): degenerate series",
                    metric.as_str(),
                    method.as_str()
                )),
                Err(e) => return Err(e.into()),
            }
        }
    }

    let report_dir = layout.report_dir();
    fs::create_dir_all(&report_dir)?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert(
        "summaries".to_string(),
        "../scores/summaries.csv".to_string(),
    );
    if layout.scores_csv().exists() {
        artifacts.insert("scores".to_string(), "../scores/scores.csv".to_string());
    }
    if layout.ar_scores_csv().exists() {
        artifacts.insert("scores_ar".to_string(), "../scores/scores_ar.csv".to_string());
    }
    for metric in MetricName::ALL {
        let svg = render_scatter(&summaries, metric);
        let name = format!("scatter_{}.svg", metric.as_str());
        fs::write(report_dir.join(&name), svg)?;
        artifacts.insert(format!("scatter_{}", metric.as_str()), name);
    }
    for lora_artifact in ["stats.csv", "histogram.csv", "depth_profile.svg", "histogram.svg"] {
        let path = layout.lora_dir().join(lora_artifact);
        if path.exists() {
            artifacts.insert(
                format!("lora_{lora_artifact}"),
                format!("../lora/{lora_artifact}"),
            );
        }
    }

    let endpoint_fingerprint = layout
        .run_manifest()
        .exists()
        .then(|| -> Result<String> {
            let raw = fs::read_to_string(layout.run_manifest())?;
            let manifest: RunManifest = serde_json::from_str(&raw)?;
            Ok(manifest.endpoint_fingerprint)
        })
        .transpose()?;

    let report = Report {
        schema: REPORT_SCHEMA,
        fingerprint,
        endpoint_fingerprint,
        granularity: config.granularity.as_str().to_string(),
        flags,
        correlations,
        summaries,
        artifacts,
    };
    fs::write(report_dir.join("report.json"), report.to_json())?;
    fs::write(report_dir.join("report.txt"), report.to_text())?;
    println!("report -> {}", report_dir.join("report.json").display());
    print!("{}", report.to_text());
    Ok(())
}

pub fn mock_serve(config: &RunConfig, behavior_spec: &str, port: u16) -> Result<()> {
    let behavior = match MockBehavior::parse(behavior_spec) {
        Some(MockBehavior::TruthWithNoise { p, .. }) => MockBehavior::TruthWithNoise {
            p,
            seed: config.seed,
        },
        Some(b) => b,
        None => bail!(
            "unknown behavior {behavior_spec:?}; expected echo-truth | fixed:<string> | noise:<p> | book-lookup"
        ),
    };

    config.validate_paths()?;
    let tok = build_tokenizer(config)?;
    let mut catalog = load_catalog(&config.extraction_catalog, &config.extraction_text_dir)?;
    for book in &mut catalog.books {
        trim_boilerplate(book, tok.as_ref(), config.trim.head_tokens, config.trim.tail_tokens)?;
    }
    let script = MockScript::build(behavior, &catalog, tok, &config.chunk)?;
    let server = MockServer::serve(script, port)?;
    println!("listening on {}", server.base_url());
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

