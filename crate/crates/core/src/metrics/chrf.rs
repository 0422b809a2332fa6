use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{check_pairs, MetricsError};

pub const CHAR_ORDER: usize = 6;
pub const WORD_ORDER: usize = 2;
pub const CHRF_BETA: f64 = 2.0;
const ORDERS: usize = CHAR_ORDER + WORD_ORDER;
const EPS: f64 = 1e-16;
const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChrfReport {
    pub score: f64,
    /// Per order (characters 1..=6 then words 1..=2): hypothesis n-grams,
    /// reference n-grams, clipped matches.
    pub statistics: Vec<[u64; 3]>,
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut out = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn word_ngrams<'a>(words: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Whitespace split, then one leading or trailing ASCII punctuation mark is
/// split off each multi-character word (trailing takes precedence).
fn split_punctuation(sentence: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for w in sentence.split_whitespace() {
        let mut chars = w.chars();
        let first = chars.next().unwrap();
        let last = w.chars().next_back().unwrap();
        if w.chars().count() == 1 {
            out.push(w);
        } else if PUNCTUATION.contains(last) {
            let cut = w.len() - last.len_utf8();
            out.push(&w[..cut]);
            out.push(&w[cut..]);
        } else if PUNCTUATION.contains(first) {
            let cut = first.len_utf8();
            out.push(&w[..cut]);
            out.push(&w[cut..]);
        } else {
            out.push(w);
        }
    }
    out
}

fn match_stats<K: std::hash::Hash + Eq>(hyp: &HashMap<K, u64>, reference: &HashMap<K, u64>) -> [u64; 3] {
    let hyp_total = hyp.values().sum();
    let ref_total = reference.values().sum();
    let matched = hyp
        .iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum();
    [hyp_total, ref_total, matched]
}

fn sentence_stats(hyp: &str, reference: &str) -> Vec<[u64; 3]> {
    let hc: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let hw = split_punctuation(hyp);
    let rw = split_punctuation(reference);
    let mut out = Vec::with_capacity(ORDERS);
    for n in 1..=CHAR_ORDER {
        out.push(match_stats(&char_ngrams(&hc, n), &char_ngrams(&rc, n)));
    }
    for n in 1..=WORD_ORDER {
        out.push(match_stats(&word_ngrams(&hw, n), &word_ngrams(&rw, n)));
    }
    out
}

/// Averages precision and recall over the orders present in both sides,
/// then takes the F-beta score of the averages.
fn f_score(stats: &[[u64; 3]]) -> f64 {
    let factor = CHRF_BETA * CHRF_BETA;
    let mut avg_prec = 0.0;
    let mut avg_rec = 0.0;
    let mut effective = 0usize;
    for &[n_hyp, n_ref, n_match] in stats {
        avg_prec += if n_hyp > 0 { n_match as f64 / n_hyp as f64 } else { EPS };
        avg_rec += if n_ref > 0 { n_match as f64 / n_ref as f64 } else { EPS };
        if n_hyp > 0 && n_ref > 0 {
            effective += 1;
        }
    }
    if effective == 0 {
        return 0.0;
    }
    avg_prec /= effective as f64;
    avg_rec /= effective as f64;
    if avg_prec + avg_rec == 0.0 {
        return 0.0;
    }
    let score = (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec);
    (100.0 * score).clamp(0.0, 100.0)
}

/// Corpus-level chrF++ (character 6-grams and word 2-grams, beta 2): counts
/// are accumulated over all pairs before scoring. Character n-grams ignore
/// whitespace.
pub fn chrf_pp<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<ChrfReport, MetricsError> {
    check_pairs(hypotheses, references)?;
    let mut statistics = vec![[0u64; 3]; ORDERS];
    for (h, r) in hypotheses.iter().zip(references) {
        for (acc, s) in statistics.iter_mut().zip(sentence_stats(h.as_ref(), r.as_ref())) {
            for i in 0..3 {
                acc[i] += s[i];
            }
        }
    }
    Ok(ChrfReport {
        score: f_score(&statistics),
        statistics,
    })
}
