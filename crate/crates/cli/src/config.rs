use std::path::{Path, PathBuf};

use p2tx::augment::AugmentationPolicy;
use p2tx::inference::DecodeConfig;
use p2tx::model::ModelConfig;
use p2tx::trainer::TrainingConfig;
use serde::{Deserialize, Serialize};

/// Every problem found while checking a configuration.
#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration ({} problems)", self.0.len())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_poses: Option<PathBuf>,
    pub train_text: Option<PathBuf>,
    pub dev_poses: Option<PathBuf>,
    pub dev_text: Option<PathBuf>,
    pub test_poses: Option<PathBuf>,
    pub test_text: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

/// Model hyperparameters; input width and vocabulary size come from the data.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub embed_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        let s = ModelConfig::small(1, 5);
        Self {
            layers: s.layers,
            heads: s.heads,
            ffn_dim: s.ffn_dim,
            embed_dim: s.embed_dim,
            max_positions: s.max_positions,
            dropout: s.dropout,
        }
    }
}

impl ModelBlock {
    pub fn to_config(&self, input_dim: usize, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            embed_dim: self.embed_dim,
            input_dim,
            vocab_size,
            max_positions: self.max_positions,
            dropout: self.dropout,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub target_fps: u32,
    pub run_dir: Option<PathBuf>,
    pub paths: Paths,
    pub model: ModelBlock,
    pub training: TrainingConfig,
    pub augmentation: Option<AugmentationPolicy>,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            target_fps: 25,
            run_dir: None,
            paths: Paths::default(),
            model: ModelBlock::default(),
            training: TrainingConfig::default(),
            augmentation: None,
            decode: DecodeConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML file; relative paths are taken relative to its folder.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigErrors(vec![e.to_string()]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        let paths = &mut cfg.paths;
        for p in [
            &mut paths.train_poses,
            &mut paths.train_text,
            &mut paths.dev_poses,
            &mut paths.dev_text,
            &mut paths.test_poses,
            &mut paths.test_text,
            &mut paths.vocab,
        ] {
            fix(p);
        }
        fix(&mut cfg.run_dir);
        fix(&mut cfg.training.pretrained);
        Ok(cfg)
    }

    /// Seeds the training run and the augmentation stream.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.seed = seed;
        for a in [self.augmentation.as_mut(), self.training.augmentation.as_mut()].into_iter().flatten() {
            a.seed = seed;
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.target_fps == 0 {
            out.push("target_fps must be positive".into());
        }
        if self.run_dir.is_none() {
            out.push("run_dir is required".into());
        }
        let p = &self.paths;
        for (name, path, dir) in [
            ("paths.train_poses", &p.train_poses, true),
            ("paths.train_text", &p.train_text, false),
            ("paths.dev_poses", &p.dev_poses, true),
            ("paths.dev_text", &p.dev_text, false),
            ("paths.vocab", &p.vocab, false),
        ] {
            match path {
                None => out.push(format!("{name} is required")),
                Some(path) if dir && !path.is_dir() => {
                    out.push(format!("{name}: directory {} does not exist", path.display()))
                }
                Some(path) if !dir && !path.is_file() => {
                    out.push(format!("{name}: file {} does not exist", path.display()))
                }
                _ => {}
            }
        }
        for (name, path) in [("paths.test_poses", &p.test_poses), ("paths.test_text", &p.test_text)] {
            if let Some(path) = path {
                if !path.exists() {
                    out.push(format!("{name}: {} does not exist", path.display()));
                }
            }
        }
        if let Some(pre) = &self.training.pretrained {
            if !pre.is_file() {
                out.push(format!("training.pretrained: file {} does not exist", pre.display()));
            }
        }
        // Placeholder data dimensions; they are checked against the data later.
        out.extend(
            self.model
                .to_config(1, 16)
                .problems()
                .into_iter()
                .map(|e| format!("model: {e}")),
        );
        out.extend(self.training.problems().into_iter().map(|e| format!("training: {e}")));
        if let Some(a) = &self.augmentation {
            if let Err(e) = a.validate() {
                out.push(format!("augmentation: {e}"));
            }
        }
        out.extend(self.decode.problems().into_iter().map(|e| format!("decode: {e}")));
        out
    }
}
