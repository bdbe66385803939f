//! ROUGE-L: longest-common-subsequence F-score between token sequences.

use crate::text::tokenize;

/// Default recall weighting β for the LCS F-score.
pub const DEFAULT_ROUGE_BETA: f64 = 1.2;

/// Length of the longest common subsequence of `a` and `b`.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // Single-row DP, keeping the row over the shorter sequence.
    let (outer, inner) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; inner.len() + 1];
    for x in outer {
        let mut diag = 0;
        for (j, y) in inner.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[inner.len()]
}

/// LCS-based F-score with recall weighted by `beta`:
/// P = ℓ/|hyp|, R = ℓ/|ref|, F = (1+β²)·P·R / (R + β²·P).
/// Returns 0 when either side is empty or the sequences share nothing.
pub fn rouge_l<T: PartialEq>(hyp: &[T], refr: &[T], beta: f64) -> f64 {
    let l = lcs_length(hyp, refr);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / hyp.len() as f64;
    let r = l as f64 / refr.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// `rouge_l` over word-level tokens of raw text.
pub fn rouge_l_text(hyp: &str, refr: &str, beta: f64) -> f64 {
    rouge_l(&tokenize(hyp), &tokenize(refr), beta)
}
