use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Adaptation;

/// Every knob for corpus preparation, model shape and optimization. Read from
/// a flat JSON object; missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub embed_dim: usize,
    pub lstm_dim: usize,
    /// Per-variable embedding sizes; empty means `context_dim` for each.
    pub context_embed_dims: Vec<usize>,
    pub context_dim: usize,
    pub context_names: Vec<String>,
    pub dropout: f64,
    /// 0 selects the full softmax.
    pub negative_samples: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Held-out evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub bloom_bits: u64,
    pub hash_size: u64,
    pub additive: bool,
    pub multiplicative: bool,
    pub lowrank: bool,
    pub hash: bool,
    pub clip_norm: Option<f64>,
    pub tokenizer: String,
    pub min_count: u64,
    pub context_threshold: usize,
    pub max_len: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            embed_dim: 30,
            lstm_dim: 200,
            context_embed_dims: Vec::new(),
            context_dim: 8,
            context_names: Vec::new(),
            dropout: 0.0,
            negative_samples: 0,
            learning_rate: 0.001,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            bloom_bits: 100_000_000,
            hash_size: 80_000_007,
            additive: false,
            multiplicative: false,
            lowrank: false,
            hash: false,
            clip_norm: None,
            tokenizer: "word".into(),
            min_count: 1,
            context_threshold: 0,
            max_len: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn adaptation(&self) -> Adaptation {
        Adaptation {
            additive: self.additive,
            multiplicative: self.multiplicative,
            lowrank: self.lowrank,
            hash: self.hash,
        }
    }

    pub fn set_adaptation(&mut self, a: Adaptation) {
        self.additive = a.additive;
        self.multiplicative = a.multiplicative;
        self.lowrank = a.lowrank;
        self.hash = a.hash;
    }

    pub fn embed_dims(&self, num_variables: usize) -> Vec<usize> {
        if self.context_embed_dims.is_empty() {
            vec![self.context_dim; num_variables]
        } else {
            self.context_embed_dims.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.embed_dim == 0 || self.lstm_dim == 0 {
            return bad("batch_size, embed_dim and lstm_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if self.hash && (self.bloom_bits == 0 || self.hash_size == 0) {
            return bad("bloom_bits and hash_size must be positive with hash adaptation");
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1");
        }
        if self.max_len == Some(0) {
            return bad("max_len must be at least 1");
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return bad("clip_norm must be positive");
            }
        }
        Ok(())
    }
}
