//! Checkpoint files, weight averaging and best-n selection.
//!
//! Layout (little-endian):
//!
//! ```text
//! "P2TX-CKPT v1\n"
//! u32 config length, config as JSON
//! u32 tensor count
//!   per tensor: u16 name length, name, u8 rank, u32 dims[rank], f32 values
//! u64 update count, u32 epoch
//! u8 has score, f64 score
//! u16 vocab hash length, vocab hash
//! ```

use std::io::{Read, Write};

use thiserror::Error;

use crate::model::{ModelConfig, ModelError, Parameters, Tensor};

pub const CHECKPOINT_MAGIC: &[u8] = b"P2TX-CKPT v1\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file: {0}")]
    Format(String),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoints disagree: {0}")]
    Mismatch(String),
    #[error("no checkpoints given")]
    Empty,
    #[error("need {needed} scored checkpoints, found {found}")]
    NotEnoughScored { needed: usize, found: usize },
    #[error("dev score {0} is outside [0, 100]")]
    InvalidScore(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub update_count: u64,
    pub epoch: u32,
    pub dev_score: Option<f64>,
    /// Hash of the vocabulary the model was trained with, if known.
    pub vocab_hash: Option<String>,
}

impl Checkpoint {
    pub fn new(params: Parameters) -> Self {
        Self {
            params,
            update_count: 0,
            epoch: 0,
            dev_score: None,
            vocab_hash: None,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        if let Some(s) = self.dev_score {
            if !(0.0..=100.0).contains(&s) {
                return Err(CheckpointError::InvalidScore(s));
            }
        }
        let mut out = CHECKPOINT_MAGIC.to_vec();
        let config = serde_json::to_vec(self.config()).map_err(|e| CheckpointError::Format(e.to_string()))?;
        out.extend((config.len() as u32).to_le_bytes());
        out.extend(config);
        out.extend((self.params.tensors().len() as u32).to_le_bytes());
        for t in self.params.tensors() {
            out.extend((t.name.len() as u16).to_le_bytes());
            out.extend(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend((d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend(v.to_le_bytes());
            }
        }
        out.extend(self.update_count.to_le_bytes());
        out.extend(self.epoch.to_le_bytes());
        out.push(self.dev_score.is_some() as u8);
        out.extend(self.dev_score.unwrap_or(0.0).to_le_bytes());
        let hash = self.vocab_hash.as_deref().unwrap_or("");
        out.extend((hash.len() as u16).to_le_bytes());
        out.extend(hash.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len(), "header")? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let len = r.u32("config")? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?)
            .map_err(|e| CheckpointError::Format(format!("config: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16("tensor name")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1, "tensor rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor shape")? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        let update_count = u64::from_le_bytes(r.take(8, "metadata")?.try_into().unwrap());
        let epoch = r.u32("metadata")?;
        let has_score = r.take(1, "metadata")?[0] != 0;
        let score = f64::from_le_bytes(r.take(8, "metadata")?.try_into().unwrap());
        let hash_len = r.u16("vocab hash")? as usize;
        let hash = std::str::from_utf8(r.take(hash_len, "vocab hash")?)
            .map_err(|_| CheckpointError::Format("vocab hash is not UTF-8".into()))?
            .to_string();
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        if has_score && !(0.0..=100.0).contains(&score) {
            return Err(CheckpointError::InvalidScore(score));
        }
        Ok(Self {
            params: Parameters::from_tensors(config, tensors)?,
            update_count,
            epoch,
            dev_score: has_score.then_some(score),
            vocab_hash: (!hash.is_empty()).then_some(hash),
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Elementwise mean of the parameter tensors. Each coordinate is summed in
/// f64 over the inputs in sorted value order, so the result does not depend
/// on the order of `checkpoints`; it is then rounded to f32.
pub fn average_checkpoints(checkpoints: &[Checkpoint]) -> Result<Checkpoint, CheckpointError> {
    let first = checkpoints.first().ok_or(CheckpointError::Empty)?;
    for (i, c) in checkpoints.iter().enumerate().skip(1) {
        if c.config() != first.config() {
            return Err(CheckpointError::Mismatch(format!("checkpoint {i} has a different model config")));
        }
        if !c.params.same_structure(&first.params) {
            return Err(CheckpointError::Mismatch(format!("checkpoint {i} has different tensor names or shapes")));
        }
        if c.vocab_hash != first.vocab_hash {
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint {i} uses vocabulary {:?}, checkpoint 0 uses {:?}",
                c.vocab_hash, first.vocab_hash
            )));
        }
    }
    let n = checkpoints.len() as f64;
    let mut params = first.params.clone();
    let mut values = Vec::with_capacity(checkpoints.len());
    for (ti, tensor) in params.tensors_mut().iter_mut().enumerate() {
        for (j, out) in tensor.data.iter_mut().enumerate() {
            values.clear();
            values.extend(checkpoints.iter().map(|c| c.params.tensors()[ti].data[j] as f64));
            values.sort_by(f64::total_cmp);
            *out = (values.iter().sum::<f64>() / n) as f32;
        }
    }
    Ok(Checkpoint {
        params,
        update_count: checkpoints.iter().map(|c| c.update_count).max().unwrap(),
        epoch: checkpoints.iter().map(|c| c.epoch).max().unwrap(),
        dev_score: None,
        vocab_hash: first.vocab_hash.clone(),
    })
}

/// The `n` checkpoints with the highest dev score, best first; equal scores
/// go to the later epoch.
pub fn select_best(checkpoints: &[Checkpoint], n: usize) -> Result<Vec<Checkpoint>, CheckpointError> {
    let mut scored: Vec<&Checkpoint> = checkpoints.iter().filter(|c| c.dev_score.is_some()).collect();
    if n == 0 || scored.len() < n {
        return Err(CheckpointError::NotEnoughScored {
            needed: n,
            found: scored.len(),
        });
    }
    scored.sort_by(|a, b| {
        b.dev_score
            .unwrap()
            .total_cmp(&a.dev_score.unwrap())
            .then(b.epoch.cmp(&a.epoch))
    });
    Ok(scored.into_iter().take(n).cloned().collect())
}
