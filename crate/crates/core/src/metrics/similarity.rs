//! The six similarity metrics, each normalized to [0, 1].
//!
//! All functions compare two unit sequences; callers choose the unit
//! (words, model tokens, or characters). Empty-input conventions are part
//! of each contract because per-book medians depend on them: two empty
//! sequences always score 1.0, a single empty side scores 0.0.

use std::collections::HashMap;
use std::hash::Hash;

/// Numerator substituted for zero n-gram matches in smoothed BLEU.
pub const BLEU_SMOOTHING_EPS: f64 = 1e-9;

/// Set overlap over set union of unigrams.
pub fn jaccard<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let hs: std::collections::HashSet<&T> = hyp.iter().collect();
    let rs: std::collections::HashSet<&T> = reference.iter().collect();
    let inter = hs.intersection(&rs).count();
    let union = hs.union(&rs).count();
    inter as f64 / union as f64
}

/// Multiset Jaccard: intersection and union of unit counts.
pub fn jaccard_multiset<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let hc = counts(hyp);
    let rc = counts(reference);
    let mut inter = 0usize;
    let mut union = 0usize;
    for (unit, &n) in &hc {
        let m = rc.get(unit).copied().unwrap_or(0);
        inter += n.min(m);
        union += n.max(m);
    }
    for (unit, &m) in &rc {
        if !hc.contains_key(unit) {
            union += m;
        }
    }
    inter as f64 / union as f64
}

/// Cosine of unit-count vectors over the union vocabulary.
pub fn cosine<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let hc = counts(hyp);
    let rc = counts(reference);
    let dot: f64 = hc
        .iter()
        .filter_map(|(unit, &n)| rc.get(unit).map(|&m| n as f64 * m as f64))
        .sum();
    // sqrt of the product rather than product of sqrts: identical inputs then
    // divide dot by sqrt(dot^2) and score exactly 1.0.
    let norm_sq: f64 = hc.values().map(|&n| (n * n) as f64).sum::<f64>()
        * rc.values().map(|&n| (n * n) as f64).sum::<f64>();
    (dot / norm_sq.sqrt()).clamp(0.0, 1.0)
}

/// 1 − editdistance / max(len), unit-level with unit costs.
pub fn levenshtein_sim<T: Eq>(hyp: &[T], reference: &[T]) -> f64 {
    let denom = hyp.len().max(reference.len());
    if denom == 0 {
        return 1.0;
    }
    1.0 - edit_distance(hyp, reference) as f64 / denom as f64
}

fn edit_distance<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        curr[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            curr[j] = (prev[j] + 1).min(curr[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Ratcliff–Obershelp ratio 2M / (len(h) + len(r)).
///
/// M is the total length of matching blocks found by recursively locating
/// the longest common contiguous block (earliest-in-first-sequence, then
/// earliest-in-second on length ties) and splitting around it. When two
/// equal-length blocks compete, that greedy choice depends on scan
/// direction, so M is taken from the better decomposition of the two
/// directions; the ratio is then symmetric in (h, r).
pub fn seq_matcher<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let m = greedy_match_total(hyp, reference).max(greedy_match_total(reference, hyp));
    2.0 * m as f64 / (hyp.len() + reference.len()) as f64
}

fn greedy_match_total<T: Eq + Hash>(a: &[T], b: &[T]) -> usize {
    let mut b2j: HashMap<&T, Vec<usize>> = HashMap::new();
    for (j, unit) in b.iter().enumerate() {
        b2j.entry(unit).or_default().push(j);
    }
    matching_total(a, 0, a.len(), 0, b.len(), &b2j)
}

fn matching_total<T: Eq + Hash>(
    a: &[T],
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
    b2j: &HashMap<&T, Vec<usize>>,
) -> usize {
    let (i, j, size) = longest_block(a, alo, ahi, blo, bhi, b2j);
    if size == 0 {
        return 0;
    }
    size + matching_total(a, alo, i, blo, j, b2j)
        + matching_total(a, i + size, ahi, j + size, bhi, b2j)
}

fn longest_block<T: Eq + Hash>(
    a: &[T],
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
    b2j: &HashMap<&T, Vec<usize>>,
) -> (usize, usize, usize) {
    let (mut besti, mut bestj, mut bestsize) = (alo, blo, 0usize);
    // j2len[j] = length of the common run ending at (i, j).
    let mut j2len: HashMap<usize, usize> = HashMap::new();
    for i in alo..ahi {
        let mut next: HashMap<usize, usize> = HashMap::new();
        if let Some(js) = b2j.get(&a[i]) {
            for &j in js {
                if j < blo {
                    continue;
                }
                if j >= bhi {
                    break;
                }
                let k = j2len.get(&j.wrapping_sub(1)).copied().unwrap_or(0) + 1;
                next.insert(j, k);
                if k > bestsize {
                    besti = i + 1 - k;
                    bestj = j + 1 - k;
                    bestsize = k;
                }
            }
        }
        j2len = next;
    }
    (besti, bestj, bestsize)
}

/// Smoothed sentence BLEU with modified n-gram precisions.
///
/// Uses orders n = 1..min(4, len(h), len(r)) with uniform weights, so
/// identical short sequences still score 1.0. A zero clipped count is
/// smoothed by substituting [`BLEU_SMOOTHING_EPS`] for the numerator. The
/// brevity penalty exp(1 − len(r)/len(h)) applies when the hypothesis is
/// shorter than the reference.
pub fn bleu<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let max_n = 4.min(hyp.len()).min(reference.len());
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let total = hyp.len() - n + 1;
        let clipped = clipped_matches(hyp, reference, n);
        let p = if clipped > 0 {
            clipped as f64 / total as f64
        } else {
            BLEU_SMOOTHING_EPS / total as f64
        };
        log_sum += p.ln();
    }
    let geo_mean = (log_sum / max_n as f64).exp();
    let bp = if hyp.len() < reference.len() {
        (1.0 - reference.len() as f64 / hyp.len() as f64).exp()
    } else {
        1.0
    };
    (bp * geo_mean).clamp(0.0, 1.0)
}

fn clipped_matches<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> usize {
    let mut rc: HashMap<&[T], usize> = HashMap::new();
    for g in reference.windows(n) {
        *rc.entry(g).or_default() += 1;
    }
    let mut hc: HashMap<&[T], usize> = HashMap::new();
    for g in hyp.windows(n) {
        *hc.entry(g).or_default() += 1;
    }
    hc.iter()
        .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
        .sum()
}

/// F1 over the longest common subsequence.
pub fn rouge_l<T: Eq>(hyp: &[T], reference: &[T]) -> f64 {
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let lcs = lcs_len(hyp, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hyp.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            curr[j] = if a[i - 1] == b[j - 1] {
                prev[j - 1] + 1
            } else {
                prev[j].max(curr[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

fn counts<T: Eq + Hash>(units: &[T]) -> HashMap<&T, usize> {
    let mut map = HashMap::new();
    for unit in units {
        *map.entry(unit).or_insert(0) += 1;
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_scores_one_on_all_six() {
        let x = w("the cat sat on the mat");
        for f in [
            jaccard::<&str>,
            cosine,
            levenshtein_sim,
            seq_matcher,
            bleu,
            rouge_l,
        ] {
            assert_eq!(f(&x, &x), 1.0);
        }
    }

    #[test]
    fn empty_conventions() {
        let e: Vec<&str> = vec![];
        let x = w("a b");
        for f in [
            jaccard::<&str>,
            cosine,
            levenshtein_sim,
            seq_matcher,
            bleu,
            rouge_l,
        ] {
            assert_eq!(f(&e, &e), 1.0, "both empty");
            assert_eq!(f(&e, &x), 0.0, "hyp empty");
            assert_eq!(f(&x, &e), 0.0, "ref empty");
        }
    }

    #[test]
    fn jaccard_half_overlap() {
        // {a,b,c} vs {b,c,d}: 2 shared / 4 in union.
        assert_eq!(jaccard(&w("a b c"), &w("b c d")), 0.5);
    }

    #[test]
    fn jaccard_is_setwise() {
        assert_eq!(jaccard(&w("a a a b"), &w("a b")), 1.0);
        assert!(jaccard_multiset(&w("a a a b"), &w("a b")) < 1.0);
    }

    #[test]
    fn cosine_hand_oracle() {
        // h = (2,1), r = (1,2): dot 4, norms √5·√5 = 5.
        assert!((cosine(&w("a a b"), &w("a b b")) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_orthogonal_vocabularies() {
        assert_eq!(cosine(&w("a b"), &w("c d")), 0.0);
    }

    #[test]
    fn levenshtein_kitten_sitting() {
        // Classic DP oracle: distance 3 over max length 7.
        let h: Vec<char> = "kitten".chars().collect();
        let r: Vec<char> = "sitting".chars().collect();
        assert!((levenshtein_sim(&h, &r) - (1.0 - 3.0 / 7.0)).abs() < 1e-15);
    }

    #[test]
    fn levenshtein_total_substitution_is_zero() {
        assert_eq!(levenshtein_sim(&w("a b c"), &w("x y z")), 0.0);
    }

    #[test]
    fn seq_matcher_hand_oracle() {
        // Longest block [b,c,d]; leftovers match nothing: 2·3/8.
        assert_eq!(seq_matcher(&w("a b c d"), &w("b c d e")), 0.75);
    }

    #[test]
    fn seq_matcher_matches_difflib_classic() {
        // difflib's documented "abxcd" vs "abcd" ratio: 2·4/9.
        let a: Vec<char> = "abxcd".chars().collect();
        let b: Vec<char> = "abcd".chars().collect();
        assert!((seq_matcher(&a, &b) - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn bleu_clipping_hand_oracle() {
        // h = "the the the", r = "the cat": unigram precision clips to 1/3,
        // bigram precision smooths to eps/2; orders capped at 2; BP = 1.
        let h = w("the the the");
        let r = w("the cat");
        let expected = ((1.0f64 / 3.0).ln() + (BLEU_SMOOTHING_EPS / 2.0).ln()) / 2.0;
        assert!((bleu(&h, &r) - expected.exp()).abs() < 1e-15);
    }

    #[test]
    fn bleu_no_overlap_is_tiny() {
        let h = w("x y z q w e r t y u i o");
        let r = w("a b c d f g h j k l m n");
        let score = bleu(&h, &r);
        assert!(score <= 1e-2, "got {score}");
    }

    #[test]
    fn bleu_short_identity_still_one() {
        assert_eq!(bleu(&w("a"), &w("a")), 1.0);
        assert_eq!(bleu(&w("a b"), &w("a b")), 1.0);
        assert_eq!(bleu(&w("a b c"), &w("a b c")), 1.0);
    }

    #[test]
    fn bleu_brevity_penalty_direction() {
        // A perfect-precision prefix half the reference length gets exactly
        // the brevity penalty exp(1 - 2) and nothing else.
        let h = w("a b c d");
        let r = w("a b c d e f g h");
        assert!((bleu(&h, &r) - (-1.0f64).exp()).abs() < 1e-15);
        // The overlong direction loses n-gram precision instead.
        assert!(bleu(&r, &h) < 1.0);
    }

    #[test]
    fn rouge_l_hand_oracle() {
        // LCS 4: P = 1, R = 0.8, F1 = 1.6/1.8.
        let h = w("the cat on mat");
        let r = w("the cat sat on mat");
        assert!((rouge_l(&h, &r) - 2.0 * 0.8 / 1.8).abs() < 1e-15);
    }

    #[test]
    fn rouge_l_disjoint_is_zero() {
        assert_eq!(rouge_l(&w("a b"), &w("c d")), 0.0);
    }

    #[test]
    fn symmetric_metrics_are_symmetric() {
        let h = w("a b c d a");
        let r = w("b d d e");
        assert_eq!(jaccard(&h, &r), jaccard(&r, &h));
        assert_eq!(cosine(&h, &r), cosine(&r, &h));
        assert_eq!(levenshtein_sim(&h, &r), levenshtein_sim(&r, &h));
        assert_eq!(seq_matcher(&h, &r), seq_matcher(&r, &h));
    }

    #[test]
    fn seq_matcher_symmetric_on_competing_ties() {
        // Single-direction greedy finds M=2 scanning h->r but M=3 scanning
        // r->h here; taking the better decomposition keeps the ratio
        // symmetric.
        let h = w("p q z w r s");
        let r = w("z r s x p q");
        assert_eq!(seq_matcher(&h, &r), 0.5);
        assert_eq!(seq_matcher(&r, &h), 0.5);
    }
}
