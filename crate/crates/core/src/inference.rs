//! Autoregressive decoding: greedy (beam 1) and beam search with
//! length-normalized scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{log_softmax, EncoderState, ModelError, Network};
use crate::pose::FeatureSequence;
use crate::tokenizer::{TokenizerError, Vocabulary, BOS, EOS, PAD};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error("vocabulary has {vocab} tokens but the model expects {model}")]
    VocabMismatch { vocab: usize, model: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_len: usize,
    /// Scores are `sum(log p) / len^alpha`.
    pub alpha: f64,
    /// Subtracted from the log-probability of tokens already in the prefix.
    /// Zero disables it.
    pub repetition_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_len: 256,
            alpha: 1.0,
            repetition_penalty: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        Self {
            beam_size: 1,
            max_len,
            alpha: 1.0,
            repetition_penalty: 0.0,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.beam_size == 0 {
            out.push("beam_size must be at least 1".to_string());
        }
        if self.max_len == 0 {
            out.push("max_len must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            out.push(format!("alpha {} is outside [0, 1]", self.alpha));
        }
        if !(self.repetition_penalty >= 0.0) {
            out.push(format!("repetition_penalty {} must be >= 0", self.repetition_penalty));
        }
        out
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        match self.problems().first() {
            None => Ok(()),
            Some(_) => Err(InferenceError::InvalidConfig(self.problems().join("; "))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationHypothesis {
    /// Generated ids without the leading bos; ends with eos unless
    /// `hit_max_len`.
    pub ids: Vec<u32>,
    pub text: String,
    /// Length-normalized log-probability.
    pub score: f64,
    pub log_prob: f64,
    pub hit_max_len: bool,
}

/// Normalized score of a hypothesis with `len` generated tokens.
pub fn normalized_score(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(alpha)
    }
}

/// Log-probabilities of the next token, with pad and bos excluded.
pub fn next_token_scores(
    net: &Network,
    enc: &EncoderState,
    prefix: &[u32],
    repetition_penalty: f64,
) -> Result<Vec<f64>, ModelError> {
    let mut scores = log_softmax(&net.next_logits(enc, prefix)?);
    scores[PAD as usize] = f64::NEG_INFINITY;
    scores[BOS as usize] = f64::NEG_INFINITY;
    if repetition_penalty > 0.0 {
        for &id in &prefix[1..] {
            if id != EOS {
                scores[id as usize] -= repetition_penalty;
            }
        }
    }
    Ok(scores)
}

#[derive(Clone, Debug)]
struct Beam {
    tokens: Vec<u32>,
    log_prob: f64,
}

/// Kept prefixes (without bos) after each decoding step.
#[derive(Clone, Debug, Default)]
pub struct BeamTrace {
    pub steps: Vec<Vec<Vec<u32>>>,
}

fn finish(beam: Beam, alpha: f64, hit_max_len: bool) -> (Vec<u32>, f64, f64, bool) {
    let generated = beam.tokens[1..].to_vec();
    let score = normalized_score(beam.log_prob, generated.len(), alpha);
    (generated, score, beam.log_prob, hit_max_len)
}

fn greedy(
    net: &Network,
    enc: &EncoderState,
    cfg: &DecodeConfig,
    mut trace: Option<&mut BeamTrace>,
) -> Result<(Vec<u32>, f64, f64, bool), InferenceError> {
    let mut beam = Beam {
        tokens: vec![BOS],
        log_prob: 0.0,
    };
    for _ in 0..cfg.max_len {
        let scores = next_token_scores(net, enc, &beam.tokens, cfg.repetition_penalty)?;
        let mut best = 0;
        for (id, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = id;
            }
        }
        beam.tokens.push(best as u32);
        beam.log_prob += scores[best];
        if best as u32 == EOS {
            return Ok(finish(beam, cfg.alpha, false));
        }
        if let Some(t) = trace.as_deref_mut() {
            t.steps.push(vec![beam.tokens[1..].to_vec()]);
        }
    }
    Ok(finish(beam, cfg.alpha, true))
}

/// Decodes with beam size `cfg.beam_size`; a beam of 1 is greedy argmax
/// decoding with ties going to the lower id.
///
/// Each step keeps the best `b` unfinished extensions; eos extensions ranked
/// within the top `b` become finished hypotheses. Search ends at `max_len` or
/// once no unfinished beam can still outscore the best finished one.
pub fn search(
    net: &Network,
    enc: &EncoderState,
    cfg: &DecodeConfig,
    mut trace: Option<&mut BeamTrace>,
) -> Result<(Vec<u32>, f64, f64, bool), InferenceError> {
    cfg.validate()?;
    // The prefix, bos included, must fit the position table.
    let max_len = cfg.max_len.min(net.config().max_positions.saturating_sub(1)).max(1);
    let cfg = &DecodeConfig { max_len, ..cfg.clone() };
    if cfg.beam_size == 1 {
        return greedy(net, enc, cfg, trace);
    }
    let b = cfg.beam_size;
    let mut alive = vec![Beam {
        tokens: vec![BOS],
        log_prob: 0.0,
    }];
    let mut finished: Vec<(Vec<u32>, f64, f64, bool)> = Vec::new();
    // Log-probabilities only decrease as tokens are appended, so an
    // unfinished beam can at best reach log_prob / max_len^alpha.
    let ceiling = |log_prob: f64| log_prob / (cfg.max_len as f64).powf(cfg.alpha);
    for step in 0..cfg.max_len {
        let mut candidates: Vec<(f64, Vec<u32>)> = Vec::new();
        for beam in &alive {
            let scores = next_token_scores(net, enc, &beam.tokens, cfg.repetition_penalty)?;
            for (id, &s) in scores.iter().enumerate() {
                if s == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = beam.tokens.clone();
                tokens.push(id as u32);
                candidates.push((beam.log_prob + s, tokens));
            }
        }
        // Highest log-probability first, then the lexicographically smaller
        // sequence.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let mut next = Vec::with_capacity(b);
        for (rank, (log_prob, tokens)) in candidates.into_iter().enumerate() {
            if next.len() == b {
                break;
            }
            let beam = Beam { tokens, log_prob };
            if *beam.tokens.last().unwrap() == EOS {
                if rank < b {
                    finished.push(finish(beam, cfg.alpha, false));
                }
            } else {
                next.push(beam);
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.steps.push(next.iter().map(|beam| beam.tokens[1..].to_vec()).collect());
        }
        if step + 1 == cfg.max_len {
            finished.extend(next.drain(..).map(|beam| finish(beam, cfg.alpha, true)));
        }
        alive = next;
        let best_finished = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
        if alive.iter().all(|beam| ceiling(beam.log_prob) <= best_finished) {
            break;
        }
    }
    let best = finished
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .expect("at least one hypothesis is produced");
    Ok(best)
}

/// Decodes one source sequence to text.
pub fn translate(
    net: &Network,
    vocab: &Vocabulary,
    src: &FeatureSequence,
    cfg: &DecodeConfig,
) -> Result<TranslationHypothesis, InferenceError> {
    if vocab.len() != net.config().vocab_size {
        return Err(InferenceError::VocabMismatch {
            vocab: vocab.len(),
            model: net.config().vocab_size,
        });
    }
    let enc = net.encode(src)?;
    let (ids, score, log_prob, hit_max_len) = search(net, &enc, cfg, None)?;
    let text = vocab.decode(&ids)?;
    Ok(TranslationHypothesis {
        ids,
        text,
        score,
        log_prob,
        hit_max_len,
    })
}

/// Decodes sentences in parallel; output order matches input order.
pub fn translate_batch(
    net: &Network,
    vocab: &Vocabulary,
    sources: &[FeatureSequence],
    cfg: &DecodeConfig,
) -> Result<Vec<TranslationHypothesis>, InferenceError> {
    sources
        .par_iter()
        .map(|src| translate(net, vocab, src, cfg))
        .collect()
}
