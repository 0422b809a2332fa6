use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Video hours per thousand unique words; lower means sparser supervision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub duration_hours: f64,
    pub unique_words: usize,
    pub ratio: f64,
}

impl CorpusStats {
    pub fn from_counts(duration_hours: f64, unique_words: usize) -> Result<Self, MetricsError> {
        if !(duration_hours > 0.0) {
            return Err(MetricsError::NonPositiveDuration(duration_hours));
        }
        if unique_words == 0 {
            return Err(MetricsError::EmptyCorpus);
        }
        Ok(Self {
            duration_hours,
            unique_words,
            ratio: duration_hours / (unique_words as f64 / 1000.0),
        })
    }
}

/// Counts distinct whitespace-delimited words (case-sensitive, no
/// punctuation splitting).
pub fn corpus_stats(corpus: &str, duration_hours: f64) -> Result<CorpusStats, MetricsError> {
    let words: HashSet<&str> = corpus.split_whitespace().collect();
    CorpusStats::from_counts(duration_hours, words.len())
}
