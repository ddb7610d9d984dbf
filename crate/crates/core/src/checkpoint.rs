//! Self-describing JSON checkpoints.
//!
//! A checkpoint stores the model config, every named parameter with its
//! shape, the tokenizer in vocab-file form, and a hash of the
//! configuration. Loading into a run whose configuration hashes
//! differently is refused.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::Tensor;
use crate::tokenizer::{Tokenizer, TokenizerError, TokenizerKind};

pub const FORMAT: &str = "bgm-han-checkpoint/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("checkpoint was trained with config hash {found}, but this config hashes to {expected}; the model dimensions, ablation flags or tokenizer settings differ")]
    HashMismatch { expected: String, found: String },
    #[error("checkpoint tokenizer: {0}")]
    Tokenizer(#[from] TokenizerError),
    #[error("checkpoint parameters: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct HashInput<'a> {
    model: &'a ModelConfig,
    tokenizer: TokenizerKind,
    target_size: usize,
}

/// Hash of everything the configuration fixes about a trained model. The
/// vocabulary size is left out because it comes from tokenizer training.
pub fn config_hash(model: &ModelConfig, tokenizer: TokenizerKind, target_size: usize) -> String {
    let model = ModelConfig {
        vocab_size: 0,
        ..model.clone()
    };
    let text = serde_json::to_string(&HashInput {
        model: &model,
        tokenizer,
        target_size,
    })
    .expect("config serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stored {
    format: String,
    config_hash: String,
    target_size: usize,
    model: ModelConfig,
    tokenizer: String,
    params: Vec<StoredParam>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub tokenizer: Tokenizer,
    pub target_size: usize,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(model: Model, tokenizer: Tokenizer, target_size: usize) -> Self {
        let config_hash = config_hash(model.config(), tokenizer.kind(), target_size);
        Self {
            model,
            tokenizer,
            target_size,
            config_hash,
        }
    }

    pub fn to_json(&self) -> String {
        let stored = Stored {
            format: FORMAT.into(),
            config_hash: self.config_hash.clone(),
            target_size: self.target_size,
            model: self.model.config().clone(),
            tokenizer: self.tokenizer.to_text(),
            params: self
                .model
                .params()
                .iter()
                .map(|p| StoredParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&stored).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let stored: Stored = serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if stored.format != FORMAT {
            return Err(CheckpointError::Format(format!("unknown format tag {:?}", stored.format)));
        }
        let tokenizer = Tokenizer::from_text(&stored.tokenizer)?;
        if tokenizer.vocab_size() != stored.model.vocab_size {
            return Err(CheckpointError::Format(format!(
                "tokenizer has {} ids but the model table has {} rows",
                tokenizer.vocab_size(),
                stored.model.vocab_size
            )));
        }
        let tensors = stored
            .params
            .into_iter()
            .map(|p| {
                let t = Tensor::new(p.shape, p.data).map_err(ModelError::from)?;
                Ok((p.name, t))
            })
            .collect::<Result<Vec<_>, CheckpointError>>()?;
        let model = Model::from_params(stored.model, tensors)?;
        let expected = config_hash(model.config(), tokenizer.kind(), stored.target_size);
        if expected != stored.config_hash {
            return Err(CheckpointError::Format(format!(
                "stored hash {} does not match its own contents ({expected})",
                stored.config_hash
            )));
        }
        Ok(Self {
            model,
            tokenizer,
            target_size: stored.target_size,
            config_hash: stored.config_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fails unless the checkpoint was produced under a configuration with
    /// hash `expected`.
    pub fn ensure_hash(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.config_hash == expected {
            Ok(())
        } else {
            Err(CheckpointError::HashMismatch {
                expected: expected.to_string(),
                found: self.config_hash.clone(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Grid;
    use crate::model::Ablation;
    use crate::tensor::GeluKind;
    use crate::tokenizer::train_bpe;

    fn sample() -> Checkpoint {
        let tok = Tokenizer::Bpe(train_bpe("abc abd ab", 8).unwrap());
        let cfg = ModelConfig {
            vocab_size: tok.vocab_size(),
            embed_dim: 4,
            hidden_dim: 4,
            heads: 2,
            ffn_dim: 4,
            grid: Grid::new(2, 3),
            dropout: 0.0,
            ablation: Ablation::FULL,
            gelu: GeluKind::Exact,
            ln_eps: 1e-5,
        };
        Checkpoint::new(Model::new(cfg, 1).unwrap(), tok, 8)
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json(), ck.to_json());
    }

    #[test]
    fn hash_ignores_vocab_size_only() {
        let ck = sample();
        let cfg = ck.model.config().clone();
        let h = config_hash(&cfg, TokenizerKind::Bpe, 8);
        assert_eq!(h, config_hash(&ModelConfig { vocab_size: 99, ..cfg.clone() }, TokenizerKind::Bpe, 8));
        assert_ne!(h, config_hash(&ModelConfig { heads: 1, ..cfg.clone() }, TokenizerKind::Bpe, 8));
        assert_ne!(h, config_hash(&cfg, TokenizerKind::Word, 8));
        assert!(matches!(ck.ensure_hash("abc"), Err(CheckpointError::HashMismatch { .. })));
    }

    #[test]
    fn tampered_files_are_rejected() {
        let json = sample().to_json().replace("\"format\":\"bgm-han-checkpoint/1\"", "\"format\":\"x\"");
        assert!(matches!(Checkpoint::from_json(&json), Err(CheckpointError::Format(_))));
    }
}
