use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{check_pairs, tokenize_intl, MetricsError};

pub const MAX_ORDER: usize = 4;

/// Treatment of n-gram orders without any match.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Every k-th zero-match order gets precision `1 / (2^k * total)`.
    #[default]
    Exp,
    /// Plain modified precision; any zero order makes the score 0.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu: f64,
    /// Modified n-gram precisions as fractions, after smoothing.
    pub precisions: [f64; MAX_ORDER],
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    pub smoothing: Smoothing,
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level, case-sensitive, single-reference BLEU-4 over
/// internationally tokenized text.
pub fn bleu4<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    smoothing: Smoothing,
) -> Result<BleuReport, MetricsError> {
    check_pairs(hypotheses, references)?;
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (h, r) in hypotheses.iter().zip(references) {
        let h = tokenize_intl(h.as_ref());
        let r = tokenize_intl(r.as_ref());
        let ht: Vec<&str> = h.split(' ').filter(|t| !t.is_empty()).collect();
        let rt: Vec<&str> = r.split(' ').filter(|t| !t.is_empty()).collect();
        hyp_len += ht.len() as u64;
        ref_len += rt.len() as u64;
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            totals[n - 1] += ht.len().saturating_sub(n - 1) as u64;
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<u64>();
        }
    }
    Ok(score(matches, totals, hyp_len, ref_len, smoothing))
}

fn score(
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_len: u64,
    ref_len: u64,
    smoothing: Smoothing,
) -> BleuReport {
    let mut precisions = [0.0; MAX_ORDER];
    let mut smooth = 1.0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            // No n-grams of this order in the hypotheses: precision stays 0.
            continue;
        }
        precisions[n] = if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else {
            match smoothing {
                Smoothing::Exp => {
                    smooth *= 2.0;
                    1.0 / (smooth * totals[n] as f64)
                }
                Smoothing::None => 0.0,
            }
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.iter().any(|&p| p == 0.0) || brevity_penalty == 0.0 {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (brevity_penalty * mean_log.exp() * 100.0).min(100.0)
    };
    BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
        smoothing,
    }
}
