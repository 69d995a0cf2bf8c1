//! Self-contained SVG figures with the plotted data embedded in a comment
//! block, so every figure is diffable and re-derivable from its own bytes.
//!
//! Rendering is pure string building over immutable inputs: the same input
//! always produces byte-identical output.

use std::fmt::Write as _;

use crate::lora::{DepthProfile, GlobalHistogram, HistogramBins, THRESHOLDS};
use crate::metrics::{BookSummary, MetricName};

const WIDTH: f64 = 640.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;

const PRE_COLOR: &str = "#1f77b4";
const POST_COLOR: &str = "#d62728";
/// Threshold palette: 0.01 green, 0.1 red, 1.0 blue.
const THRESHOLD_COLORS: [&str; 3] = ["#2ca02c", "#d62728", "#1f77b4"];

fn svg_open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n<style>text{{font-family:sans-serif;font-size:11px}}</style>\n<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>\n",
        width / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Popularity (log axis, zero pinned at the axis floor) vs median metric.
/// Pre-cutoff books are blue, post-cutoff red.
pub fn render_scatter(summaries: &[BookSummary], metric: MetricName) -> String {
    let height = 420.0;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = height - MARGIN_T - MARGIN_B;

    let max_rating = summaries
        .iter()
        .map(|s| s.ratings_count)
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let min_positive = summaries
        .iter()
        .filter(|s| s.ratings_count > 0)
        .map(|s| s.ratings_count)
        .min()
        .unwrap_or(1) as f64;
    let log_lo = min_positive.log10().floor();
    let log_hi = max_rating.log10().ceil().max(log_lo + 1.0);

    let x_of = |ratings: u64| -> f64 {
        if ratings == 0 {
            MARGIN_L
        } else {
            let t = ((ratings as f64).log10() - log_lo) / (log_hi - log_lo);
            MARGIN_L + t.clamp(0.0, 1.0) * plot_w
        }
    };
    let y_of = |value: f64| -> f64 { MARGIN_T + (1.0 - value.clamp(0.0, 1.0)) * plot_h };

    let mut out = String::new();
    svg_open(
        &mut out,
        WIDTH,
        height,
        &format!("median {} vs ratings", metric.as_str()),
    );

    out.push_str("<!-- data\nbook_id,ratings,median,post_cutoff\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{:.6},{}",
            s.book_id,
            s.ratings_count,
            s.medians.get(metric),
            s.post_cutoff
        );
    }
    out.push_str("-->\n");

    // Axes.
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN_L:.1}\" y=\"{MARGIN_T:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#333\"/>"
    );
    for i in 0..=4 {
        let value = i as f64 / 4.0;
        let y = y_of(value);
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_L:.1}\" y2=\"{y:.1}\" stroke=\"#333\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{value:.2}</text>",
            MARGIN_L - 4.0,
            MARGIN_L - 7.0,
            y + 4.0
        );
    }
    let mut decade = log_lo as i64;
    while decade <= log_hi as i64 {
        let x = MARGIN_L + ((decade as f64 - log_lo) / (log_hi - log_lo)) * plot_w;
        let _ = writeln!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#333\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{decade}</text>",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 4.0,
            MARGIN_T + plot_h + 18.0
        );
        decade += 1;
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">ratings (log scale; 0 pinned left)</text>",
        MARGIN_L + plot_w / 2.0,
        height - 8.0
    );

    for s in summaries {
        let color = if s.post_cutoff { POST_COLOR } else { PRE_COLOR };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\" fill-opacity=\"0.8\"><title>{}</title></circle>",
            x_of(s.ratings_count),
            y_of(s.medians.get(metric)),
            escape(&s.book_id)
        );
    }

    // Legend.
    let _ = writeln!(
        out,
        "<circle cx=\"{:.1}\" cy=\"{MARGIN_T:.1}\" r=\"4\" fill=\"{PRE_COLOR}\"/><text x=\"{:.1}\" y=\"{:.1}\">pre</text>",
        MARGIN_L + plot_w - 90.0,
        MARGIN_L + plot_w - 82.0,
        MARGIN_T + 4.0
    );
    let _ = writeln!(
        out,
        "<circle cx=\"{:.1}\" cy=\"{MARGIN_T:.1}\" r=\"4\" fill=\"{POST_COLOR}\"/><text x=\"{:.1}\" y=\"{:.1}\">post</text>",
        MARGIN_L + plot_w - 45.0,
        MARGIN_L + plot_w - 37.0,
        MARGIN_T + 4.0
    );

    out.push_str("</svg>\n");
    out
}

/// Three-panel fraction-over-depth figure: all modules, attention only,
/// MLP only, one curve per threshold.
pub fn render_depth_profile(profile: &DepthProfile) -> String {
    let panel_h = 150.0;
    let height = MARGIN_T + 3.0 * panel_h + MARGIN_B;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;

    let mut out = String::new();
    svg_open(&mut out, WIDTH, height, "fraction of updated weights by layer");

    out.push_str("<!-- data\npanel,layer,frac_gt_0.01,frac_gt_0.1,frac_gt_1.0\n");
    for (name, series) in [
        ("all", &profile.all),
        ("attention", &profile.attention),
        ("mlp", &profile.mlp),
    ] {
        for (layer, fracs) in profile.layers.iter().zip(series.iter()) {
            let _ = writeln!(
                out,
                "{name},{layer},{:.9},{:.9},{:.9}",
                fracs[0], fracs[1], fracs[2]
            );
        }
    }
    out.push_str("-->\n");

    let max_layer = profile.layers.iter().copied().max().unwrap_or(0).max(1) as f64;
    let x_of = |layer: usize| MARGIN_L + (layer as f64 / max_layer) * plot_w;

    for (panel, (name, series)) in [
        ("all", &profile.all),
        ("attention", &profile.attention),
        ("mlp", &profile.mlp),
    ]
    .into_iter()
    .enumerate()
    {
        let top = MARGIN_T + panel as f64 * panel_h + 10.0;
        let h = panel_h - 30.0;
        let max_frac = series
            .iter()
            .flat_map(|f| f.iter().copied())
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let y_of = |frac: f64| top + (1.0 - (frac / max_frac).clamp(0.0, 1.0)) * h;

        let _ = writeln!(
            out,
            "<rect x=\"{MARGIN_L:.1}\" y=\"{top:.1}\" width=\"{plot_w:.1}\" height=\"{h:.1}\" fill=\"none\" stroke=\"#333\"/><text x=\"{:.1}\" y=\"{:.1}\">{name} (y max {max_frac:.3e})</text>",
            MARGIN_L + 4.0,
            top + 12.0
        );
        for (ti, color) in THRESHOLD_COLORS.iter().enumerate() {
            let mut points = String::new();
            for (layer, fracs) in profile.layers.iter().zip(series.iter()) {
                let _ = write!(points, "{:.2},{:.2} ", x_of(*layer), y_of(fracs[ti]));
            }
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                points.trim_end()
            );
        }
    }

    for (ti, color) in THRESHOLD_COLORS.iter().enumerate() {
        let x = MARGIN_L + 90.0 * ti as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.1}\" y=\"{:.1}\">&gt; {}</text>",
            height - 20.0,
            x + 20.0,
            height - 20.0,
            x + 25.0,
            height - 16.0,
            THRESHOLDS[ti]
        );
    }

    out.push_str("</svg>\n");
    out
}

/// Log-log histogram of relative update magnitudes.
pub fn render_histogram(hist: &GlobalHistogram) -> String {
    let height = 360.0;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = height - MARGIN_T - MARGIN_B;

    let mut out = String::new();
    svg_open(&mut out, WIDTH, height, "relative update magnitudes (log-log)");

    out.push_str("<!-- data\nbin_lo,bin_hi,count\n");
    let _ = writeln!(out, "0,{:.3e},{}", crate::lora::HIST_LO, hist.bins.underflow);
    for (bin, count) in hist.bins.counts.iter().enumerate() {
        let (lo, hi) = HistogramBins::edges(bin);
        let _ = writeln!(out, "{lo:.3e},{hi:.3e},{count}");
    }
    let _ = writeln!(out, "{:.3e},inf,{}", crate::lora::HIST_HI, hist.bins.overflow);
    out.push_str("-->\n");

    let max_count = hist.bins.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let log_max = (max_count + 1.0).log10();
    let n_bins = hist.bins.counts.len() as f64;
    let bar_w = plot_w / n_bins;

    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN_L:.1}\" y=\"{MARGIN_T:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#333\"/>"
    );
    for (bin, &count) in hist.bins.counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let h = ((count as f64 + 1.0).log10() / log_max).min(1.0) * plot_h;
        let x = MARGIN_L + bin as f64 * bar_w;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"#1f77b4\"/>",
            MARGIN_T + plot_h - h,
            bar_w.max(1.0)
        );
    }
    for exp in [-8i32, -6, -4, -2, 0, 2, 4] {
        let t = (exp as f64 + 8.0) / 12.0;
        let x = MARGIN_L + t * plot_w;
        let _ = writeln!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#333\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{exp}</text>",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 4.0,
            MARGIN_T + plot_h + 18.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">relative update magnitude; frac &gt; 0.01 = {:.4}, frac &gt; 1.0 = {:.6}</text>",
        MARGIN_L + plot_w / 2.0,
        height - 8.0,
        hist.frac_gt_001,
        hist.frac_gt_1
    );

    out.push_str("</svg>\n");
    out
}
