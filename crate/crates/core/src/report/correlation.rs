//! Popularity-vs-extraction correlation statistics.

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::metrics::{BookSummary, MetricName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrMethod {
    /// Pearson on (ratings, median metric) as-is.
    PearsonRaw,
    /// Pearson with ratings transformed by log10(1 + x); ratings span seven
    /// decades, so the raw scale is dominated by a few blockbusters.
    PearsonLog1pRatings,
    /// Spearman rank correlation with average ranks for ties.
    Spearman,
}

impl CorrMethod {
    pub const ALL: [CorrMethod; 3] = [
        CorrMethod::PearsonRaw,
        CorrMethod::PearsonLog1pRatings,
        CorrMethod::Spearman,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorrMethod::PearsonRaw => "pearson_raw",
            CorrMethod::PearsonLog1pRatings => "pearson_log1p_ratings",
            CorrMethod::Spearman => "spearman",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorrelationResult {
    pub method: CorrMethod,
    pub metric: MetricName,
    pub coefficient: f64,
    pub n: usize,
}

/// Correlate book popularity against a median metric across the summaries.
pub fn correlate(
    summaries: &[BookSummary],
    metric: MetricName,
    method: CorrMethod,
) -> Result<CorrelationResult, ReportError> {
    if summaries.len() < 2 {
        return Err(ReportError::TooFewPoints {
            n: summaries.len(),
        });
    }
    let ratings: Vec<f64> = summaries.iter().map(|s| s.ratings_count as f64).collect();
    let medians: Vec<f64> = summaries.iter().map(|s| s.medians.get(metric)).collect();
    let coefficient = match method {
        CorrMethod::PearsonRaw => pearson(&ratings, &medians)?,
        CorrMethod::PearsonLog1pRatings => {
            let transformed: Vec<f64> = ratings.iter().map(|&x| (1.0 + x).log10()).collect();
            pearson(&transformed, &medians)?
        }
        CorrMethod::Spearman => spearman(&ratings, &medians)?,
    };
    Ok(CorrelationResult {
        method,
        metric,
        coefficient,
        n: summaries.len(),
    })
}

/// Pearson correlation via centered sums.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, ReportError> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mean_x) * (y - mean_y);
        var_x += (x - mean_x) * (x - mean_x);
        var_y += (y - mean_y) * (y - mean_y);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(ReportError::DegenerateSeries);
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Average ranks (1-based), ties sharing the mean of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman: Pearson over average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, ReportError> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}
