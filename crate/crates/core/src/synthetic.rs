//! Seeded toy pose/text corpora.
//!
//! Sentences come from templates such as `"the {cat|dog} sat"`, where each
//! `{a|b|...}` slot picks one alternative. Every word owns a smooth
//! trajectory (a sum of two or three sinusoids per keypoint coordinate, keyed
//! by a hash of the word), and a sentence's pose is the concatenation of its
//! words' trajectories, each time-warped to an equal share of the frames,
//! plus small seeded Gaussian jitter.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pose::{Fps, PoseSequence};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub pairs: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub keypoints: usize,
    pub coord_dim: usize,
    pub fps: u32,
    pub templates: Vec<String>,
    pub seed: u64,
    /// Standard deviation of the per-value noise.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    0.005
}

impl SynthSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("pairs", self.pairs),
            ("min_frames", self.min_frames),
            ("max_frames", self.max_frames),
            ("keypoints", self.keypoints),
            ("fps", self.fps as usize),
        ] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        if self.min_frames > self.max_frames {
            out.push(format!(
                "min_frames {} exceeds max_frames {}",
                self.min_frames, self.max_frames
            ));
        }
        if self.coord_dim != 2 && self.coord_dim != 3 {
            out.push(format!("coord_dim must be 2 or 3, got {}", self.coord_dim));
        }
        if self.templates.is_empty() {
            out.push("templates must not be empty".into());
        }
        for t in &self.templates {
            if let Err(e) = parse_template(t) {
                out.push(format!("template {t:?}: {e}"));
            }
        }
        if !(self.jitter >= 0.0 && self.jitter < 0.05) {
            out.push(format!("jitter {} must be in [0, 0.05)", self.jitter));
        }
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(problems))
        }
    }
}

enum Piece {
    Text(String),
    Slot(Vec<String>),
}

fn parse_template(t: &str) -> Result<Vec<Piece>, String> {
    let mut pieces = Vec::new();
    let mut rest = t;
    while let Some(open) = rest.find('{') {
        if rest[..open].contains('}') {
            return Err("unbalanced '}'".into());
        }
        pieces.push(Piece::Text(rest[..open].to_string()));
        let close = rest[open..].find('}').ok_or("unclosed '{'")? + open;
        let body = &rest[open + 1..close];
        if body.contains('{') {
            return Err("nested slots".into());
        }
        let options: Vec<String> = body.split('|').map(str::to_string).collect();
        if options.iter().any(|o| o.trim().is_empty()) {
            return Err("empty slot alternative".into());
        }
        pieces.push(Piece::Slot(options));
        rest = &rest[close + 1..];
    }
    if rest.contains('}') {
        return Err("unbalanced '}'".into());
    }
    pieces.push(Piece::Text(rest.to_string()));
    let has_word = pieces.iter().any(|p| match p {
        Piece::Text(s) => !s.trim().is_empty(),
        Piece::Slot(_) => true,
    });
    if !has_word {
        return Err("template has no words".into());
    }
    Ok(pieces)
}

struct Wave {
    base: f64,
    terms: Vec<(f64, f64, f64)>,
}

/// The word's trajectory parameters, one wave per keypoint coordinate.
fn word_waves(word: &str, values: usize) -> Vec<Wave> {
    let digest = Sha256::digest(word.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()));
    (0..values)
        .map(|_| {
            let count = rng.gen_range(2..=3);
            Wave {
                base: rng.gen_range(0.35..0.65),
                terms: (0..count)
                    .map(|_| {
                        (
                            rng.gen_range(0.02..0.09),
                            rng.gen_range(0.5..2.0),
                            rng.gen_range(0.0..TAU),
                        )
                    })
                    .collect(),
            }
        })
        .collect()
}

impl Wave {
    fn at(&self, u: f64) -> f64 {
        self.base
            + self
                .terms
                .iter()
                .map(|&(a, f, phase)| a * (TAU * f * u + phase).sin())
                .sum::<f64>()
    }
}

/// Clean pose for a sentence of `frames` frames (at least two per word).
pub fn sentence_pose(sentence: &str, frames: usize, spec: &SynthSpec) -> Vec<f64> {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let n = words.len().max(1);
    let frames = frames.max(2 * n);
    let values = spec.keypoints * spec.coord_dim;
    let mut out = Vec::with_capacity(frames * values);
    let waves: Vec<Vec<Wave>> = words.iter().map(|w| word_waves(w, values)).collect();
    for t in 0..frames {
        let i = t * n / frames;
        let start = i * frames / n;
        let end = (i + 1) * frames / n;
        let u = (t - start) as f64 / (end - start) as f64;
        out.extend(waves[i].iter().map(|w| w.at(u)));
    }
    out
}

fn sample_sentence<R: Rng>(templates: &[Vec<Piece>], rng: &mut R) -> String {
    let pieces = &templates[rng.gen_range(0..templates.len())];
    let mut s = String::new();
    for p in pieces {
        match p {
            Piece::Text(t) => s.push_str(t),
            Piece::Slot(options) => s.push_str(&options[rng.gen_range(0..options.len())]),
        }
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Generates `spec.pairs` pose/sentence pairs. Deterministic per spec.
pub fn generate(spec: &SynthSpec) -> Result<(Vec<PoseSequence>, Vec<String>), SynthError> {
    spec.validate()?;
    let templates: Vec<Vec<Piece>> = spec
        .templates
        .iter()
        .map(|t| parse_template(t).expect("validated"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.jitter.max(f64::MIN_POSITIVE)).unwrap();
    let fps = Fps::whole(spec.fps).expect("validated");
    let mut poses = Vec::with_capacity(spec.pairs);
    let mut sentences = Vec::with_capacity(spec.pairs);
    for _ in 0..spec.pairs {
        let sentence = sample_sentence(&templates, &mut rng);
        let frames = rng.gen_range(spec.min_frames..=spec.max_frames);
        let coords = sentence_pose(&sentence, frames, spec)
            .into_iter()
            .map(|v| {
                let j = if spec.jitter > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (v + j).clamp(0.0, 1.0) as f32
            })
            .collect();
        poses.push(
            PoseSequence::from_coords(fps, spec.coord_dim, spec.keypoints, coords)
                .expect("generator produces consistent shapes"),
        );
        sentences.push(sentence);
    }
    Ok((poses, sentences))
}
