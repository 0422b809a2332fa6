//! Pose-to-text translation toolkit.
//!
//! The pipeline runs pose keypoint sequences through frame-rate
//! unification, optional keypoint augmentation and flattening, then a small
//! transformer encoder-decoder that emits BPE subwords. Training, checkpoint
//! selection and averaging, decoding and BLEU/chrF++ scoring live alongside.

pub mod augment;
pub mod pose;
pub mod resample;
pub mod tokenizer;
pub mod model;
pub mod metrics;
pub mod inference;
pub mod checkpoint;
pub mod synthetic;
pub mod trainer;
