//! Run reports: correlation statistics, figures, and a self-contained
//! JSON + text document tying every artifact to its provenance.

mod correlation;
mod plots;

pub use correlation::{
    average_ranks, correlate, pearson, spearman, CorrMethod, CorrelationResult,
};
pub use plots::{render_depth_profile, render_histogram, render_scatter};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::BookSummary;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("degenerate series: zero variance")]
    DegenerateSeries,
    #[error("need at least 2 scored books, have {n}")]
    TooFewPoints { n: usize },
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact fingerprints disagree: {left} vs {right} ({what})")]
    FingerprintMismatch {
        what: String,
        left: String,
        right: String,
    },
}

pub const REPORT_SCHEMA: u32 = 1;

/// The structured report document; serializes to stable JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub schema: u32,
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_fingerprint: Option<String>,
    pub granularity: String,
    /// Provenance notes for every configuration choice a reader should know
    /// about before comparing numbers across runs.
    pub flags: Vec<String>,
    pub correlations: Vec<CorrelationResult>,
    pub summaries: Vec<BookSummary>,
    /// Artifact name -> path relative to the report file.
    pub artifacts: BTreeMap<String, String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }

    /// Human-readable companion to the JSON document.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "memprobe report (schema {})", self.schema);
        let _ = writeln!(out, "config fingerprint: {}", self.fingerprint);
        if let Some(ep) = &self.endpoint_fingerprint {
            let _ = writeln!(out, "endpoint: {ep}");
        }
        let _ = writeln!(out, "metric granularity: {}", self.granularity);
        let _ = writeln!(out, "\nnotes:");
        for flag in &self.flags {
            let _ = writeln!(out, "  - {flag}");
        }
        if !self.correlations.is_empty() {
            let _ = writeln!(out, "\ncorrelations (ratings vs median metric):");
            for c in &self.correlations {
                let _ = writeln!(
                    out,
                    "  {:<22} {:<12} r = {:+.4}  (n = {})",
                    c.method.as_str(),
                    format!("{:?}", c.metric).to_lowercase(),
                    c.coefficient,
                    c.n
                );
            }
        }
        if !self.summaries.is_empty() {
            let _ = writeln!(
                out,
                "\n{:<28} {:>10} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
                "book", "ratings", "post", "n", "jaccard", "cosine", "leven", "seqm", "bleu",
                "rouge_l"
            );
            for s in &self.summaries {
                let _ = writeln!(
                    out,
                    "{:<28} {:>10} {:>5} {:>8} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                    truncate(&s.book_id, 28),
                    s.ratings_count,
                    s.post_cutoff,
                    s.n_scored,
                    s.medians.jaccard,
                    s.medians.cosine,
                    s.medians.levenshtein,
                    s.medians.seq_matcher,
                    s.medians.bleu,
                    s.medians.rouge_l
                );
            }
        }
        if !self.artifacts.is_empty() {
            let _ = writeln!(out, "\nartifacts:");
            for (name, path) in &self.artifacts {
                let _ = writeln!(out, "  {name}: {path}");
            }
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> String {
    if s.len() <= n {
        s.to_string()
    } else {
        format!("{}…", &s[..s.char_indices().take(n - 1).last().map_or(0, |(i, c)| i + c.len_utf8())])
    }
}

/// Standard provenance notes attached to every report.
pub fn standard_flags(system_prompt_overridden: bool) -> Vec<String> {
    let mut flags = vec![
        "metric unit of comparison is configurable (word | model-token | character); see granularity field".to_string(),
        "trim margins are measured in tokens of the configured tokenizer".to_string(),
        "lora-audit masks zero base weights out of relative updates and reports them separately".to_string(),
        "lora-audit update fractions are weight counts over unmasked entries".to_string(),
    ];
    if system_prompt_overridden {
        flags.push("chat-mode system prompt was overridden in config".to_string());
    } else {
        flags.push(
            "chat-mode system prompt defaulted to the SFT attack system string".to_string(),
        );
    }
    flags
}
