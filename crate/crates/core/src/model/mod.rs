//! Transformer encoder-decoder over continuous pose features (encoder side)
//! and subword tokens (decoder side).
//!
//! Layers are pre-norm, the FFN uses ReLU, positions are sinusoidal and the
//! token embedding doubles as the output projection.

mod linalg;
mod network;
mod params;

use thiserror::Error;

pub use linalg::{gemm, Mat};
pub use network::{log_softmax, EncoderState, ForwardCache, ForwardOutput, Gradients, Network};
pub use params::{param_count, Init, Layout, ModelConfig, Parameters, Tensor, TensorSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("source feature width {found} does not match model input_dim {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sequence length {length} exceeds max_positions {max}")]
    PositionOverflow { length: usize, max: usize },
    #[error("token id {id} is outside the vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not match parameters: {0}")]
    CacheMismatch(String),
}

/// Convenience wrapper: widens `params` and runs one teacher-forced pass.
pub fn forward<R: rand::Rng + ?Sized>(
    params: &Parameters,
    src: &crate::pose::FeatureSequence,
    tgt_in: &[u32],
    train_mode: bool,
    rng: &mut R,
) -> Result<ForwardOutput, ModelError> {
    Network::new(params).forward(src, tgt_in, train_mode, rng)
}
