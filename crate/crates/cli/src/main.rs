//! memprobe: book-memorization probing pipeline.
//!
//! Each subcommand reads the previous stage's artifacts from the configured
//! output directory and writes its own, so runs work stage by stage or end
//! to end. Exit code is 0 on success; failures print one machine-parsable
//! line `error: stage=<name> message="..."` and exit 1.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use memprobe_core::extract::PromptMode;
use memprobe_core::RunConfig;

#[derive(Parser)]
#[command(name = "memprobe", version, about = "Measure verbatim book memorization in language models")]
struct Cli {
    /// Path to the run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Override the endpoint base URL (MEMPROBE_ENDPOINT also overrides the
    /// config; this flag wins over both).
    #[arg(long, global = true)]
    endpoint: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the catalog and book texts, trim boilerplate margins, and write
    /// ingest artifacts.
    Ingest,
    /// Cut trimmed books into prefix/target windows.
    Chunk,
    /// Run piecewise extraction against the endpoint (resumes by default).
    Extract {
        /// Prompting mode: raw (pretrained) or chat (instruct).
        #[arg(long, value_parser = parse_mode)]
        mode: Option<PromptMode>,
        /// Ignore any existing journal and start over.
        #[arg(long)]
        fresh: bool,
    },
    /// Autoregressively reconstruct one book from its seed prefix.
    ExtractAr {
        #[arg(long)]
        book: String,
        #[arg(long, default_value_t = 1000)]
        max_steps: usize,
    },
    /// Score generation records against ground truth.
    Score,
    /// Aggregate per-book medians from piecewise scores.
    Summarize,
    /// Emit a fine-tuning attack dataset from the training catalog.
    SftPrep {
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct LoRA weight updates and profile them against base weights.
    LoraAudit {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        adapter: PathBuf,
        /// LoRA scaling factor; required unless the adapter ships a sidecar
        /// adapter_config.json.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        rank: Option<usize>,
        /// JSON file {"pattern": "<regex>"} for non-default layer names.
        #[arg(long)]
        layer_map: Option<PathBuf>,
        /// Output directory (defaults to <out_dir>/lora).
        #[arg(long)]
        audit_out: Option<PathBuf>,
    },
    /// Correlations, figures, and the final report document.
    Report {
        /// Accept artifacts with mismatched config fingerprints.
        #[arg(long)]
        force: bool,
    },
    /// Serve a mock endpoint speaking the completions wire protocol.
    MockServe {
        /// echo-truth | fixed:<string> | noise:<p> | book-lookup
        #[arg(long)]
        behavior: String,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
}

fn parse_mode(s: &str) -> Result<PromptMode, String> {
    match s {
        "raw" => Ok(PromptMode::Raw),
        "chat" => Ok(PromptMode::Chat),
        other => Err(format!("unknown mode {other:?}; expected raw or chat")),
    }
}

impl Command {
    fn stage_name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Chunk => "chunk",
            Command::Extract { .. } => "extract",
            Command::ExtractAr { .. } => "extract-ar",
            Command::Score => "score",
            Command::Summarize => "summarize",
            Command::SftPrep { .. } => "sft-prep",
            Command::LoraAudit { .. } => "lora-audit",
            Command::Report { .. } => "report",
            Command::MockServe { .. } => "mock-serve",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .context("--config is required for this subcommand")?;
    let mut config = RunConfig::load(path)?;
    if let Some(out_dir) = &cli.out_dir {
        config.out_dir = out_dir.clone();
    }
    artifacts::apply_endpoint_overrides(&mut config, cli.endpoint.as_deref());
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => commands::ingest(&load_config(cli)?),
        Command::Chunk => commands::chunk(&load_config(cli)?),
        Command::Extract { mode, fresh } => commands::extract(&load_config(cli)?, *mode, *fresh),
        Command::ExtractAr { book, max_steps } => {
            commands::extract_ar(&load_config(cli)?, book, *max_steps)
        }
        Command::Score => commands::score(&load_config(cli)?),
        Command::Summarize => commands::summarize_cmd(&load_config(cli)?),
        Command::SftPrep { samples, seed, out } => {
            commands::sft_prep(&load_config(cli)?, *samples, *seed, out)
        }
        Command::LoraAudit {
            base,
            adapter,
            alpha,
            rank,
            layer_map,
            audit_out,
        } => {
            // A run config is optional here; the audit is self-contained.
            let config = if cli.config.is_some() {
                Some(load_config(cli)?)
            } else {
                None
            };
            commands::lora_audit(
                config.as_ref(),
                &commands::LoraAuditArgs {
                    base: base.clone(),
                    adapter: adapter.clone(),
                    alpha: *alpha,
                    rank: *rank,
                    layer_map: layer_map.clone(),
                    out_dir: audit_out.clone(),
                },
            )
        }
        Command::Report { force } => commands::report_cmd(&load_config(cli)?, *force),
        Command::MockServe { behavior, port } => {
            commands::mock_serve(&load_config(cli)?, behavior, *port)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error: stage={} message={:?}",
                cli.command.stage_name(),
                format!("{e:#}")
            );
            ExitCode::FAILURE
        }
    }
}
