//! Corpus-level BLEU-4 and chrF++ against single references, plus the
//! duration-per-vocabulary corpus statistic.

mod bleu;
mod chrf;
mod stats;
mod tokenize;

use thiserror::Error;

pub use bleu::{bleu4, BleuReport, Smoothing};
pub use chrf::{chrf_pp, ChrfReport, CHAR_ORDER, CHRF_BETA, WORD_ORDER};
pub use stats::{corpus_stats, CorpusStats};
pub use tokenize::tokenize_intl;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
}

fn check_pairs<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<(), MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hyps.len(),
            references: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(())
}
