//! Simplified METEOR variant ("METEOR-x"): exact-match unigram alignment with
//! recall-weighted harmonic mean and a fragmentation penalty. No stemming,
//! synonym, or paraphrase matching.

use crate::text::tokenize;

/// Scores `hyp` against `refr`. Each hypothesis token is aligned left to right
/// to the earliest unmatched identical reference token (one-to-one). With u
/// matches: P = u/|hyp|, R = u/|ref|, F = 10PR/(R+9P). The matches split into
/// c chunks (maximal runs contiguous in both sequences), and the final score
/// is F·(1 − 0.5·(c/u)³). Returns 0 when nothing matches.
pub fn meteor<T: PartialEq>(hyp: &[T], refr: &[T]) -> f64 {
    let mut ref_used = vec![false; refr.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, h) in hyp.iter().enumerate() {
        for (j, r) in refr.iter().enumerate() {
            if !ref_used[j] && r == h {
                ref_used[j] = true;
                pairs.push((i, j));
                break;
            }
        }
    }
    let u = pairs.len();
    if u == 0 {
        return 0.0;
    }
    let p = u as f64 / hyp.len() as f64;
    let r = u as f64 / refr.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1)
        .count();
    let penalty = 0.5 * (chunks as f64 / u as f64).powi(3);
    f * (1.0 - penalty)
}

/// `meteor` over word-level tokens of raw text.
pub fn meteor_text(hyp: &str, refr: &str) -> f64 {
    meteor(&tokenize(hyp), &tokenize(refr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn close(got: f64, want: f64) {
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn identical_sequences_pay_only_the_floor_penalty() {
        // u tokens, one chunk: score = 1 − 0.5/u³.
        close(meteor(&toks("a b c"), &toks("a b c")), 53.0 / 54.0);
        close(meteor(&toks("a"), &toks("a")), 0.5);
        close(meteor_text("Where does X live ?", "where does x live ?"), 1.0 - 0.5 / 125.0);
    }

    #[test]
    fn disjoint_or_empty_scores_zero() {
        assert_eq!(meteor(&toks("a b"), &toks("c d")), 0.0);
        assert_eq!(meteor(&toks(""), &toks("a")), 0.0);
        assert_eq!(meteor(&toks("a"), &toks("")), 0.0);
    }

    #[test]
    fn reference_gap_splits_chunks() {
        // hyp [the cat sat] → ref positions 0,1,3: two chunks.
        // P=1, R=3/4, F=10/13, penalty=0.5·(2/3)³ → 230/351.
        close(meteor(&toks("the cat sat"), &toks("the cat was sat")), 230.0 / 351.0);
        // hyp [a b c d], ref [a b x c d]: ref positions 0,1,3,4 → chunks
        // {a b},{c d}; F=40/49, penalty=1/16 → 75/98.
        close(meteor(&toks("a b c d"), &toks("a b x c d")), 75.0 / 98.0);
    }

    #[test]
    fn swapped_order_maximizes_the_penalty() {
        // Full matches but every adjacent pair breaks: c = u → penalty = 0.5.
        close(meteor(&toks("b a"), &toks("a b")), 0.5);
        close(meteor(&toks("a c b"), &toks("a b c")), 0.5);
    }

    #[test]
    fn duplicates_align_one_to_one() {
        // Extra hyp copy is unmatched: u=1, P=1/2, R=1 → F=10/11, score 5/11.
        close(meteor(&toks("a a"), &toks("a")), 5.0 / 11.0);
        // Extra ref copy: u=1, P=1, R=1/2 → F=10/19, score 5/19.
        close(meteor(&toks("a"), &toks("a a")), 5.0 / 19.0);
    }

    #[test]
    fn unmatched_hyp_flanks_dilute_precision_not_chunks() {
        // x/y unmatched: u=2, P=1/2, R=1, one chunk → (10/11)·(15/16) = 75/88.
        close(meteor(&toks("x a b y"), &toks("a b")), 75.0 / 88.0);
    }

    #[test]
    fn penalty_bounds_hold_on_random_pairs() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let alphabet = ["a", "b", "c", "d"];
        for _ in 0..500 {
            let h: Vec<&str> =
                (0..rng.random_range(1..=6)).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
            let r: Vec<&str> =
                (0..rng.random_range(1..=6)).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
            let score = meteor(&h, &r);
            assert!((0.0..=1.0).contains(&score));
            // Reconstruct u to bound the penalty region when something matched.
            let mut used = vec![false; r.len()];
            let mut u = 0;
            for t in &h {
                if let Some(j) = r.iter().enumerate().position(|(j, x)| !used[j] && x == t) {
                    used[j] = true;
                    u += 1;
                }
            }
            if u > 0 {
                let p = u as f64 / h.len() as f64;
                let rr = u as f64 / r.len() as f64;
                let f = 10.0 * p * rr / (rr + 9.0 * p);
                assert!(score <= f && score >= f * 0.5 - 1e-15, "score {score} f {f}");
            } else {
                assert_eq!(score, 0.0);
            }
        }
    }
}
