use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters. Encoder and decoder share `layers`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub embed_dim: usize,
    pub input_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// 3 layers, 4 heads, 1024-wide FFN, 256-dim embeddings.
    pub fn small(input_dim: usize, vocab_size: usize) -> Self {
        Self {
            layers: 3,
            heads: 4,
            ffn_dim: 1024,
            embed_dim: 256,
            input_dim,
            vocab_size,
            max_positions: 4096,
            dropout: 0.3,
        }
    }

    /// 6 layers, 8 heads, 2048-wide FFN, 512-dim embeddings.
    pub fn baseline(input_dim: usize, vocab_size: usize) -> Self {
        Self {
            layers: 6,
            heads: 8,
            ffn_dim: 2048,
            embed_dim: 512,
            ..Self::small(input_dim, vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("embed_dim", self.embed_dim),
            ("input_dim", self.input_dim),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ] {
            if v == 0 {
                out.push(format!("{name} must be at least 1"));
            }
        }
        if self.heads > 0 && self.embed_dim % self.heads != 0 {
            out.push(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push(format!("dropout {} is outside [0, 1)", self.dropout));
        }
        if self.vocab_size > 0 && self.vocab_size <= crate::tokenizer::UNK as usize {
            out.push(format!("vocab_size {} leaves no room beyond the specials", self.vocab_size));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(problems))
        }
    }
}

/// Total scalar count, closed form.
pub fn param_count(config: &ModelConfig) -> usize {
    let d = config.embed_dim;
    let f = config.ffn_dim;
    let l = config.layers;
    let attention = 4 * (d * d + d);
    let ffn = d * f + f + f * d + d;
    let norm = 2 * d;
    let encoder = config.input_dim * d + d + l * (attention + ffn + 2 * norm) + norm;
    let decoder = config.vocab_size * d + l * (2 * attention + ffn + 3 * norm) + norm;
    encoder + decoder
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnIdx {
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub o: LinearIdx,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FfnIdx {
    pub fc1: LinearIdx,
    pub fc2: LinearIdx,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderLayerIdx {
    pub norm1: NormIdx,
    pub attn: AttnIdx,
    pub norm2: NormIdx,
    pub ffn: FfnIdx,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecoderLayerIdx {
    pub norm1: NormIdx,
    pub self_attn: AttnIdx,
    pub norm2: NormIdx,
    pub cross_attn: AttnIdx,
    pub norm3: NormIdx,
    pub ffn: FfnIdx,
}

/// Names, shapes and roles of every tensor, derived from the config alone.
#[derive(Clone, Debug)]
pub struct Layout {
    pub(crate) specs: Vec<TensorSpec>,
    pub(crate) input_proj: LinearIdx,
    pub(crate) encoder: Vec<EncoderLayerIdx>,
    pub(crate) encoder_norm: NormIdx,
    pub(crate) embed: usize,
    pub(crate) decoder: Vec<DecoderLayerIdx>,
    pub(crate) decoder_norm: NormIdx,
}

struct Builder {
    specs: Vec<TensorSpec>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(TensorSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        LinearIdx {
            w: self.push(format!("{prefix}.weight"), vec![fan_in, fan_out], Init::Xavier),
            b: self.push(format!("{prefix}.bias"), vec![fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.push(format!("{prefix}.gain"), vec![d], Init::Ones),
            bias: self.push(format!("{prefix}.bias"), vec![d], Init::Zeros),
        }
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnIdx {
        FfnIdx {
            fc1: self.linear(&format!("{prefix}.fc1"), d, f),
            fc2: self.linear(&format!("{prefix}.fc2"), f, d),
        }
    }
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let d = config.embed_dim;
        let f = config.ffn_dim;
        let mut b = Builder { specs: Vec::new() };
        let input_proj = b.linear("encoder.input_proj", config.input_dim, d);
        let encoder = (0..config.layers)
            .map(|i| {
                let p = format!("encoder.layers.{i}");
                EncoderLayerIdx {
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    attn: b.attention(&format!("{p}.self_attn"), d),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, f),
                }
            })
            .collect();
        let encoder_norm = b.norm("encoder.final_norm", d);
        let embed = b.push("decoder.embed_tokens".into(), vec![config.vocab_size, d], Init::Xavier);
        let decoder = (0..config.layers)
            .map(|i| {
                let p = format!("decoder.layers.{i}");
                DecoderLayerIdx {
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    self_attn: b.attention(&format!("{p}.self_attn"), d),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    cross_attn: b.attention(&format!("{p}.cross_attn"), d),
                    norm3: b.norm(&format!("{p}.norm3"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, f),
                }
            })
            .collect();
        let decoder_norm = b.norm("decoder.final_norm", d);
        Self {
            specs: b.specs,
            input_proj,
            encoder,
            encoder_norm,
            embed,
            decoder,
            decoder_norm,
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }
}

/// A named tensor of 32-bit values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Model weights in storage precision, in [`Layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl Parameters {
    /// Xavier-uniform weights (±sqrt(6 / (fan_in + fan_out))), zero biases,
    /// unit layer-norm gains. Deterministic per seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = Layout::new(config)
            .specs
            .into_iter()
            .map(|spec| {
                let n = spec.numel();
                let data = match spec.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Xavier => {
                        let bound = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
                    }
                };
                Tensor {
                    name: spec.name,
                    shape: spec.shape,
                    data,
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Checks names and shapes against the layout implied by `config`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if layout.specs.len() != tensors.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                layout.specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in layout.specs.iter().zip(&tensors) {
            if spec.name != t.name || spec.shape != t.shape || t.data.len() != spec.numel() {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name, t.shape, spec.name, spec.shape
                )));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// True when configs and every tensor name/shape agree.
    pub fn same_structure(&self, other: &Parameters) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}
