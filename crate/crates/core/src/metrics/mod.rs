//! Similarity scoring: six metrics in [0, 1] plus per-book median summaries.

mod scoring;
pub mod similarity;

pub use scoring::{
    median, read_scores_csv, read_summaries_csv, score_all, score_pair, summarize, units,
    write_scores_csv, write_summaries_csv, ArtifactMeta, BookSummary, Granularity, MetricName,
    MetricValues, ScoreError, ScoreRecord, SCORES_CSV_HEADER, SUMMARIES_CSV_HEADER,
};
pub use similarity::{
    bleu, cosine, jaccard, jaccard_multiset, levenshtein_sim, rouge_l, seq_matcher,
    BLEU_SMOOTHING_EPS,
};
