//! Teacher-forced training with Adam, dev-set evaluation and checkpoint
//! snapshots, optionally starting from a pretrained checkpoint.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{self, AugmentError, AugmentationPolicy};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::inference::{translate_batch, DecodeConfig, InferenceError};
use crate::metrics::{bleu4, MetricsError, Smoothing};
use crate::model::{Gradients, Mat, ModelConfig, ModelError, Network, Parameters};
use crate::pose::{flatten_all, FeatureSequence, PoseError, PoseSequence};
use crate::tokenizer::{TokenSequence, Vocabulary, BOS, EOS, PAD};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite loss {loss} at update {update}")]
    NonFiniteLoss { update: u64, loss: f64 },
    #[error("vocabulary mismatch: pretrained checkpoint uses vocabulary {checkpoint}, current vocabulary is {current}")]
    VocabMismatch { checkpoint: String, current: String },
    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("target of {length} tokens exceeds max_positions {max}")]
    TargetTooLong { length: usize, max: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    /// Sentence pairs per update.
    pub batch_size: usize,
    /// Peak learning rate, reached at the end of warmup.
    pub learning_rate: f64,
    pub warmup_updates: u64,
    pub label_smoothing: f64,
    pub clip_norm: f64,
    /// Epochs between dev evaluations.
    pub eval_every: usize,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub augmentation: Option<AugmentationPolicy>,
    pub pretrained: Option<PathBuf>,
    /// Longer sources are truncated with a warning.
    pub max_source_frames: usize,
    /// Decoding used for dev evaluation.
    pub dev_decode: DecodeConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 32,
            learning_rate: 5e-4,
            warmup_updates: 4000,
            label_smoothing: 0.1,
            clip_norm: 1.0,
            eval_every: 1,
            patience: 5,
            seed: 1,
            augmentation: None,
            pretrained: None,
            max_source_frames: 4096,
            dev_decode: DecodeConfig::greedy(128),
        }
    }
}

impl TrainingConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch_size == 0 {
            out.push("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            out.push(format!("label_smoothing {} is outside [0, 1)", self.label_smoothing));
        }
        if !(self.clip_norm > 0.0) {
            out.push(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if self.eval_every == 0 {
            out.push("eval_every must be at least 1".into());
        }
        if self.patience == 0 {
            out.push("patience must be at least 1".into());
        }
        if self.max_source_frames == 0 {
            out.push("max_source_frames must be at least 1".into());
        }
        if let Some(policy) = &self.augmentation {
            if let Err(e) = policy.validate() {
                out.push(format!("augmentation: {e}"));
            }
        }
        out.extend(self.dev_decode.problems().into_iter().map(|p| format!("dev_decode: {p}")));
        out
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(problems))
        }
    }
}

/// Linear warmup to `lr`, then inverse square-root decay. `step` counts
/// updates from 1.
pub fn learning_rate(lr: f64, warmup: u64, step: u64) -> f64 {
    let step = step.max(1) as f64;
    if warmup == 0 {
        return lr / step.sqrt();
    }
    let warmup = warmup as f64;
    lr * (step / warmup).min((warmup / step).sqrt())
}

/// Summed label-smoothed cross-entropy over the rows whose label is not pad,
/// and its gradient with respect to the logits. The smoothed target is
/// `epsilon / V` everywhere plus `1 - epsilon` on the label.
pub fn label_smoothed_loss(logits: &Mat, labels: &[u32], epsilon: f64) -> (f64, Mat) {
    let v = logits.cols;
    let mut grad = Mat::zeros(logits.rows, v);
    let mut loss = 0.0;
    for (t, &label) in labels.iter().enumerate().take(logits.rows) {
        if label == PAD {
            continue;
        }
        let row = logits.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        let g = grad.row_mut(t);
        for (j, (&x, gj)) in row.iter().zip(g.iter_mut()).enumerate() {
            let q = epsilon / v as f64 + if j == label as usize { 1.0 - epsilon } else { 0.0 };
            loss -= q * (x - lse);
            *gj = (x - max).exp() / sum - q;
        }
    }
    (loss, grad)
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = (0..net.num_tensors()).map(|i| vec![0.0; net.tensor(i).len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update. Weights are kept representable in
    /// f32 so that saving a checkpoint loses nothing.
    pub fn update(&mut self, net: &mut Network, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (i, g) in grads.tensors.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in net.tensor_mut(i).iter_mut().enumerate() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                let step = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                *w = (*w - step) as f32 as f64;
            }
        }
    }
}

/// One training pair ready for the model: source features and target ids
/// without bos/eos.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub source: FeatureSequence,
    pub target: TokenSequence,
}

impl Example {
    /// Decoder input (bos + target) and labels (target + eos).
    pub fn teacher_forcing(&self) -> (Vec<u32>, Vec<u32>) {
        let mut input = Vec::with_capacity(self.target.len() + 1);
        input.push(BOS);
        input.extend_from_slice(&self.target);
        let mut labels = self.target.0.clone();
        labels.push(EOS);
        (input, labels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Mean loss per target token.
    pub loss: f64,
    pub tokens: usize,
    pub grad_norm: f64,
    pub lr: f64,
}

fn example_gradients(
    net: &Network,
    example: &Example,
    epsilon: f64,
    seed: u64,
    index: usize,
) -> Result<(f64, usize, Gradients), TrainError> {
    let (input, labels) = example.teacher_forcing();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let train_mode = net.config().dropout > 0.0;
    let out = net.forward(&example.source, &input, train_mode, &mut rng)?;
    let (loss, dlogits) = label_smoothed_loss(&out.logits, &labels, epsilon);
    let grads = net.backward(&out.cache, &dlogits)?;
    Ok((loss, labels.len(), grads))
}

/// Loss and gradients of a batch, normalized per target token, with
/// examples evaluated in parallel and summed in batch order.
pub fn batch_gradients(
    net: &Network,
    batch: &[Example],
    epsilon: f64,
    seed: u64,
) -> Result<(f64, usize, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Empty("batch"));
    }
    let mut total = Gradients::zeros(net.layout());
    let mut loss = 0.0;
    let mut tokens = 0;
    let chunk = rayon::current_num_threads().max(1);
    for (c, examples) in batch.chunks(chunk).enumerate() {
        let parts: Vec<_> = examples
            .par_iter()
            .enumerate()
            .map(|(i, ex)| example_gradients(net, ex, epsilon, seed, c * chunk + i))
            .collect::<Result<_, _>>()?;
        for (l, n, g) in parts {
            loss += l;
            tokens += n;
            total.add_assign(&g);
        }
    }
    total.scale(1.0 / tokens as f64);
    Ok((loss / tokens as f64, tokens, total))
}

/// Forward, backward, clipping and one Adam update. `seed` drives dropout.
pub fn train_step(
    net: &mut Network,
    optimizer: &mut AdamState,
    batch: &[Example],
    config: &TrainingConfig,
    seed: u64,
) -> Result<StepStats, TrainError> {
    let (loss, tokens, mut grads) = batch_gradients(net, batch, config.label_smoothing, seed)?;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(TrainError::NonFiniteLoss {
            update: optimizer.step + 1,
            loss,
        });
    }
    let grad_norm = clip_gradients(&mut grads, config.clip_norm);
    let lr = learning_rate(config.learning_rate, config.warmup_updates, optimizer.step + 1);
    optimizer.update(net, &grads, lr);
    Ok(StepStats {
        loss,
        tokens,
        grad_norm,
        lr,
    })
}

/// A pose paired with its reference sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub pose: PoseSequence,
    pub text: String,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub update: u64,
    pub loss: Option<f64>,
    pub lr: f64,
    pub dev_bleu: Option<f64>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshots sorted by dev BLEU, best first (later epoch first on ties).
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<LogEntry>,
}

fn features(pose: &PoseSequence, max_frames: usize) -> Result<FeatureSequence, TrainError> {
    let f = flatten_all(pose, 0.0)?;
    if f.len() > max_frames {
        log::warn!("source of {} frames truncated to {max_frames}", f.len());
        return Ok(f.truncated(max_frames));
    }
    Ok(f)
}

/// Batches of roughly equal source length: shuffle, sort within pools of
/// several batches, then shuffle the batch order.
fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks(batch_size * 16) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| lengths[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Corpus BLEU-4 (exp smoothing) of greedy or beam output on `dev`.
pub fn evaluate_dev(
    net: &Network,
    vocab: &Vocabulary,
    dev: &[FeatureSequence],
    references: &[String],
    decode: &DecodeConfig,
) -> Result<f64, TrainError> {
    let hyps = translate_batch(net, vocab, dev, decode)?;
    let texts: Vec<String> = hyps.into_iter().map(|h| h.text).collect();
    Ok(bleu4(&texts, references, Smoothing::Exp)?.bleu)
}

fn initial_parameters(
    model: &ModelConfig,
    vocab: &Vocabulary,
    config: &TrainingConfig,
) -> Result<Parameters, TrainError> {
    let Some(path) = &config.pretrained else {
        return Ok(Parameters::init(model, config.seed)?);
    };
    let ckpt = Checkpoint::load(path)?;
    let current = vocab.hash();
    match &ckpt.vocab_hash {
        Some(h) if *h == current => {}
        other => {
            return Err(TrainError::VocabMismatch {
                checkpoint: other.clone().unwrap_or_else(|| "<none>".into()),
                current,
            })
        }
    }
    let mut pre = ckpt.config().clone();
    pre.dropout = model.dropout;
    if &pre != model {
        return Err(TrainError::ConfigMismatch(format!(
            "pretrained checkpoint has {:?}, run uses {:?}",
            ckpt.config(),
            model
        )));
    }
    let tensors = ckpt.params.tensors().to_vec();
    Ok(Parameters::from_tensors(model.clone(), tensors)?)
}

/// Trains on `train`, evaluating on `dev` every `eval_every` epochs. With
/// `max_epochs == 0` the initial model is evaluated once. `on_log` sees each
/// log entry as it is produced.
pub fn train(
    train: &[Pair],
    dev: &[Pair],
    vocab: &Vocabulary,
    model: &ModelConfig,
    config: &TrainingConfig,
    mut on_log: impl FnMut(&LogEntry),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(TrainError::Empty("training set"));
    }
    if dev.is_empty() {
        return Err(TrainError::Empty("dev set"));
    }
    if vocab.len() != model.vocab_size {
        return Err(TrainError::ConfigMismatch(format!(
            "vocabulary has {} tokens, model vocab_size is {}",
            vocab.len(),
            model.vocab_size
        )));
    }
    let start = Instant::now();
    let max_frames = config.max_source_frames.min(model.max_positions);
    let mut net = Network::new(&initial_parameters(model, vocab, config)?);
    let mut optimizer = AdamState::new(&net);

    let targets: Vec<TokenSequence> = train.iter().map(|p| vocab.encode(&p.text)).collect();
    for t in &targets {
        if t.len() + 1 > model.max_positions {
            return Err(TrainError::TargetTooLong {
                length: t.len() + 1,
                max: model.max_positions,
            });
        }
    }
    let clean: Vec<FeatureSequence> = train
        .iter()
        .map(|p| features(&p.pose, max_frames))
        .collect::<Result<_, _>>()?;
    let lengths: Vec<usize> = clean.iter().map(FeatureSequence::len).collect();
    let dev_src: Vec<FeatureSequence> = dev
        .iter()
        .map(|p| features(&p.pose, max_frames))
        .collect::<Result<_, _>>()?;
    let dev_refs: Vec<String> = dev.iter().map(|p| p.text.clone()).collect();
    let mut aug_rng = config.augmentation.map(|p| p.rng());
    let vocab_hash = vocab.hash();

    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut emit = |entry: LogEntry, log: &mut Vec<LogEntry>| {
        on_log(&entry);
        log.push(entry);
    };

    let evaluate = |net: &Network, epoch: usize, update: u64| -> Result<Checkpoint, TrainError> {
        let score = evaluate_dev(net, vocab, &dev_src, &dev_refs, &config.dev_decode)?;
        Ok(Checkpoint {
            params: net.to_parameters(),
            update_count: update,
            epoch: epoch as u32,
            dev_score: Some(score),
            vocab_hash: Some(vocab_hash.clone()),
        })
    };

    if config.max_epochs == 0 {
        let ckpt = evaluate(&net, 0, 0)?;
        emit(
            LogEntry {
                epoch: 0,
                update: 0,
                loss: None,
                lr: 0.0,
                dev_bleu: ckpt.dev_score,
                wall_time: start.elapsed().as_secs_f64(),
            },
            &mut log,
        );
        snapshots.push(ckpt);
    }

    for epoch in 1..=config.max_epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(epoch as u64);
        let mut loss_sum = 0.0;
        let mut token_sum = 0;
        let mut lr = 0.0;
        for batch in make_batches(&lengths, config.batch_size, &mut shuffle_rng) {
            let examples: Vec<Example> = batch
                .iter()
                .map(|&i| {
                    let source = match (&config.augmentation, aug_rng.as_mut()) {
                        (Some(policy), Some(rng)) => {
                            let params = augment::sample_params(policy, rng);
                            features(&augment::apply(&train[i].pose, &params, policy.center)?, max_frames)?
                        }
                        _ => clean[i].clone(),
                    };
                    Ok(Example {
                        source,
                        target: targets[i].clone(),
                    })
                })
                .collect::<Result<_, TrainError>>()?;
            let step_seed = config.seed ^ (optimizer.step + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let stats = train_step(&mut net, &mut optimizer, &examples, config, step_seed)?;
            loss_sum += stats.loss * stats.tokens as f64;
            token_sum += stats.tokens;
            lr = stats.lr;
        }
        let mut entry = LogEntry {
            epoch,
            update: optimizer.step,
            loss: Some(loss_sum / token_sum as f64),
            lr,
            dev_bleu: None,
            wall_time: 0.0,
        };
        let mut stop = false;
        if epoch % config.eval_every == 0 || epoch == config.max_epochs {
            let ckpt = evaluate(&net, epoch, optimizer.step)?;
            let score = ckpt.dev_score.unwrap();
            entry.dev_bleu = Some(score);
            snapshots.push(ckpt);
            if score > best {
                best = score;
                stale = 0;
            } else {
                stale += 1;
                stop = stale >= config.patience;
            }
        }
        entry.wall_time = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch} update {} loss {:.4} lr {:.3e} dev bleu {:?}",
            entry.update,
            entry.loss.unwrap(),
            entry.lr,
            entry.dev_bleu
        );
        emit(entry, &mut log);
        if stop {
            break;
        }
    }

    snapshots.sort_by(|a: &Checkpoint, b: &Checkpoint| {
        b.dev_score
            .unwrap()
            .total_cmp(&a.dev_score.unwrap())
            .then(b.epoch.cmp(&a.epoch))
    });
    Ok(TrainOutcome {
        checkpoints: snapshots,
        log,
    })
}
