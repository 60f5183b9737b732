//! Text overlap scores: smoothed sentence BLEU and a METEOR-style F-mean.

use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(|w| w.to_lowercase()).collect()
}

fn ngrams(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w).or_default() += 1;
    }
    m
}

/// Sentence BLEU up to 4-grams with add-one smoothing on orders above one
/// and the usual brevity penalty. In `[0, 1]`.
pub fn sentence_bleu(candidate: &str, reference: &str) -> f64 {
    let c = words(candidate);
    let r = words(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let max_n = 4.min(c.len()).min(r.len()).max(1);
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cn = ngrams(&c, n);
        let rn = ngrams(&r, n);
        let matched: usize = cn.iter().map(|(g, &k)| k.min(rn.get(g).copied().unwrap_or(0))).sum();
        let total = c.len() + 1 - n;
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let bp = if c.len() >= r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    (bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
}

/// Unigram alignment: exact matches first, then Porter-stem matches.
/// Returns `(candidate index, reference index)` pairs sorted by candidate.
fn align(c: &[String], r: &[String]) -> Vec<(usize, usize)> {
    let stemmer = Stemmer::create(Algorithm::English);
    let mut used_c = vec![false; c.len()];
    let mut used_r = vec![false; r.len()];
    let mut pairs = Vec::new();
    let c_stems: Vec<String> = c.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    let r_stems: Vec<String> = r.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    for stage in 0..2 {
        for i in 0..c.len() {
            if used_c[i] {
                continue;
            }
            let hit = (0..r.len()).find(|&j| {
                !used_r[j]
                    && if stage == 0 {
                        c[i] == r[j]
                    } else {
                        c_stems[i] == r_stems[j]
                    }
            });
            if let Some(j) = hit {
                used_c[i] = true;
                used_r[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// METEOR-style score with exact and stem matching only.
///
/// `F = 10PR / (R + 9P)`, penalty `0.5 * ((chunks - 1) / (m - 1))^3`
/// (zero for a single match), score `F * (1 - penalty)`. A perfect match
/// scores exactly 1.
pub fn meteor(candidate: &str, reference: &str) -> f64 {
    let c = words(candidate);
    let r = words(reference);
    if c.is_empty() || r.is_empty() {
        return if c.is_empty() && r.is_empty() { 1.0 } else { 0.0 };
    }
    let pairs = align(&c, &r);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / c.len() as f64;
    let rec = m as f64 / r.len() as f64;
    let fmean = 10.0 * p * rec / (rec + 9.0 * p);
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let penalty = if m > 1 {
        0.5 * ((chunks - 1) as f64 / (m - 1) as f64).powi(3)
    } else {
        0.0
    };
    fmean * (1.0 - penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meteor_closed_forms() {
        assert_eq!(meteor("the cat sat", "the cat sat"), 1.0);
        assert_eq!(meteor("dog runs", "the cat sat"), 0.0);
        // One of two words matched: P = 1/2, R = 1/3.
        let f = 10.0 * 0.5 * (1.0 / 3.0) / (1.0 / 3.0 + 9.0 * 0.5);
        assert!((meteor("the dog", "the cat sat") - f).abs() < 1e-12);
        // Stem match counts.
        assert_eq!(meteor("cats sitting", "cat sitting"), 1.0);
        // Fully reversed order: 3 matches in 3 chunks, penalty 0.5.
        assert!((meteor("c b a", "a b c") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bleu_bounds() {
        assert!((sentence_bleu("the cat sat on the mat", "the cat sat on the mat") - 1.0).abs() < 1e-12);
        assert_eq!(sentence_bleu("xyz", "the cat"), 0.0);
        let s = sentence_bleu("the cat sat", "the cat sat on the mat");
        assert!(s > 0.0 && s < 1.0);
        assert_eq!(sentence_bleu("", "a"), 0.0);
    }
}
