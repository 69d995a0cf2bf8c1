//! Independent brute-force reference implementations.
//!
//! Everything here is deliberately written on different machinery than the
//! library (plain vectors and recursion instead of hash maps and DP tables)
//! so that agreement actually checks the math, not the code.

use std::collections::HashMap;

/// Set Jaccard without hash sets: vector dedup and linear scans.
pub fn jaccard(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() && r.is_empty() {
        return 1.0;
    }
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    fn dedup(xs: &[String]) -> Vec<&String> {
        let mut out: Vec<&String> = Vec::new();
        for x in xs {
            if !out.contains(&x) {
                out.push(x);
            }
        }
        out
    }
    let hs = dedup(h);
    let rs = dedup(r);
    let inter = hs.iter().filter(|x| rs.contains(x)).count();
    let union = hs.len() + rs.len() - inter;
    inter as f64 / union as f64
}

/// Cosine of count vectors, counts found by linear scans.
pub fn cosine(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() && r.is_empty() {
        return 1.0;
    }
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut vocab: Vec<&String> = Vec::new();
    for x in h.iter().chain(r) {
        if !vocab.contains(&x) {
            vocab.push(x);
        }
    }
    let count = |xs: &[String], w: &String| xs.iter().filter(|x| *x == w).count() as f64;
    let mut dot = 0.0;
    let mut nh = 0.0;
    let mut nr = 0.0;
    for w in &vocab {
        let a = count(h, w);
        let b = count(r, w);
        dot += a * b;
        nh += a * a;
        nr += b * b;
    }
    (dot / (nh * nr).sqrt()).clamp(0.0, 1.0)
}

/// Edit distance by memoized recursion.
pub fn levenshtein_sim(h: &[String], r: &[String]) -> f64 {
    let denom = h.len().max(r.len());
    if denom == 0 {
        return 1.0;
    }
    let mut memo = HashMap::new();
    let d = edit_rec(h, r, h.len(), r.len(), &mut memo);
    1.0 - d as f64 / denom as f64
}

fn edit_rec(
    a: &[String],
    b: &[String],
    i: usize,
    j: usize,
    memo: &mut HashMap<(usize, usize), usize>,
) -> usize {
    if i == 0 {
        return j;
    }
    if j == 0 {
        return i;
    }
    if let Some(&d) = memo.get(&(i, j)) {
        return d;
    }
    let sub = edit_rec(a, b, i - 1, j - 1, memo) + usize::from(a[i - 1] != b[j - 1]);
    let del = edit_rec(a, b, i - 1, j, memo) + 1;
    let ins = edit_rec(a, b, i, j - 1, memo) + 1;
    let d = sub.min(del).min(ins);
    memo.insert((i, j), d);
    d
}

/// Ratcliff–Obershelp by full (i, j) block scanning, better of both
/// directions, mirroring the library's symmetry convention.
pub fn seq_matcher(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() && r.is_empty() {
        return 1.0;
    }
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let m = naive_total(h, r, 0, h.len(), 0, r.len()).max(naive_total(
        r,
        h,
        0,
        r.len(),
        0,
        h.len(),
    ));
    2.0 * m as f64 / (h.len() + r.len()) as f64
}

fn naive_total(a: &[String], b: &[String], alo: usize, ahi: usize, blo: usize, bhi: usize) -> usize {
    let (mut besti, mut bestj, mut best) = (alo, blo, 0usize);
    for i in alo..ahi {
        for j in blo..bhi {
            let mut k = 0;
            while i + k < ahi && j + k < bhi && a[i + k] == b[j + k] {
                k += 1;
            }
            if k > best {
                besti = i;
                bestj = j;
                best = k;
            }
        }
    }
    if best == 0 {
        return 0;
    }
    best + naive_total(a, b, alo, besti, blo, bestj)
        + naive_total(a, b, besti + best, ahi, bestj + best, bhi)
}

/// BLEU by direct n-gram matching with used-flags for clipping.
pub fn bleu(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() && r.is_empty() {
        return 1.0;
    }
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let max_n = 4.min(h.len()).min(r.len());
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hyp_grams: Vec<&[String]> = h.windows(n).collect();
        let ref_grams: Vec<&[String]> = r.windows(n).collect();
        let mut used = vec![false; ref_grams.len()];
        let mut matched = 0usize;
        for g in &hyp_grams {
            for (k, rg) in ref_grams.iter().enumerate() {
                if !used[k] && rg == g {
                    used[k] = true;
                    matched += 1;
                    break;
                }
            }
        }
        let total = hyp_grams.len() as f64;
        let p = if matched > 0 {
            matched as f64 / total
        } else {
            1e-9 / total
        };
        log_sum += p.ln();
    }
    let geo = (log_sum / max_n as f64).exp();
    let bp = if h.len() < r.len() {
        (1.0 - r.len() as f64 / h.len() as f64).exp()
    } else {
        1.0
    };
    (bp * geo).clamp(0.0, 1.0)
}

/// ROUGE-L with the LCS length from memoized recursion.
pub fn rouge_l(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() && r.is_empty() {
        return 1.0;
    }
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut memo = HashMap::new();
    let lcs = lcs_rec(h, r, h.len(), r.len(), &mut memo);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / h.len() as f64;
    let rec = lcs as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

fn lcs_rec(
    a: &[String],
    b: &[String],
    i: usize,
    j: usize,
    memo: &mut HashMap<(usize, usize), usize>,
) -> usize {
    if i == 0 || j == 0 {
        return 0;
    }
    if let Some(&v) = memo.get(&(i, j)) {
        return v;
    }
    let v = if a[i - 1] == b[j - 1] {
        lcs_rec(a, b, i - 1, j - 1, memo) + 1
    } else {
        lcs_rec(a, b, i - 1, j, memo).max(lcs_rec(a, b, i, j - 1, memo))
    };
    memo.insert((i, j), v);
    v
}

/// All six at once, in the library's metric order.
pub fn all_six(h: &[String], r: &[String]) -> [f64; 6] {
    [
        jaccard(h, r),
        cosine(h, r),
        levenshtein_sim(h, r),
        seq_matcher(h, r),
        bleu(h, r),
        rouge_l(h, r),
    ]
}

/// Valid window starts by plain enumeration.
pub fn enumerate_chunk_offsets(total_tokens: usize, prefix: usize, target: usize, stride: usize) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut s = 0usize;
    while s + prefix + target <= total_tokens {
        offsets.push(s);
        s += stride;
    }
    offsets
}

/// Pearson via the raw-sums identity (different arrangement than the
/// library's centered two-pass).
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Average ranks by counting smaller and equal values.
pub fn naive_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count();
            let equal = xs.iter().filter(|&&y| y == x).count();
            less as f64 + (equal as f64 + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&naive_ranks(xs), &naive_ranks(ys))
}

/// (alpha / rank) · B · A by triple loop.
pub fn scaled_matmul(
    b: &[Vec<f64>],
    a: &[Vec<f64>],
    alpha: f64,
    rank: usize,
) -> Vec<Vec<f64>> {
    let d_out = b.len();
    let r = a.len();
    let d_in = a[0].len();
    let scale = alpha / rank as f64;
    let mut out = vec![vec![0.0; d_in]; d_out];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..r {
                acc += b[i][k] * a[k][j];
            }
            *cell = acc * scale;
        }
    }
    out
}
