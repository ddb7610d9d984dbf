//! Run configuration: built-in profiles, TOML files and `key=value`
//! overrides, layered in that order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Fractions, SyntheticConfig};
use crate::embedding::Grid;
use crate::model::{Ablation, ModelConfig};
use crate::tensor::GeluKind;
use crate::tokenizer::TokenizerKind;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("unknown profile `{0}` (expected `paper` or `desk`)")]
    UnknownProfile(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Paper,
    #[default]
    Desk,
}

impl FromStr for Profile {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    pub signal_strength: f64,
    pub pos_rate: f64,
    pub blank_fraction: f64,
    /// Seed of the synthetic generator.
    pub seed: u64,
    /// Seed of the stratified split.
    pub split_seed: u64,
    pub fractions: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    /// Learned vocabulary size, reserved ids excluded.
    pub target_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub sentences: usize,
    pub words: usize,
    pub dropout: f64,
    pub use_bpe: bool,
    pub use_mha: bool,
    pub use_grc: bool,
    pub gelu: GeluKind,
    pub ln_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub data: DataSection,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub ablation: AblationSection,
}

impl RunConfig {
    /// CI-sized defaults.
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            data: DataSection {
                n: 600,
                signal_strength: 0.9,
                pos_rate: 0.4,
                blank_fraction: 0.05,
                seed: 0,
                split_seed: 0,
                fractions: Fractions::default().0,
            },
            tokenizer: TokenizerSection { target_size: 500 },
            model: ModelSection {
                embed_dim: 32,
                hidden_dim: 32,
                heads: 4,
                ffn_dim: 64,
                sentences: 4,
                words: 12,
                dropout: 0.1,
                use_bpe: true,
                use_mha: true,
                use_grc: true,
                gelu: GeluKind::Exact,
                ln_eps: 1e-5,
            },
            train: TrainConfig::default(),
            ablation: AblationSection { seeds: vec![0, 1, 2] },
        }
    }

    /// Full-size hyperparameters; far too large for CI.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            profile: Profile::Paper,
            data: DataSection { n: 3083, ..desk.data },
            tokenizer: TokenizerSection { target_size: 5000 },
            model: ModelSection {
                embed_dim: 768,
                hidden_dim: 1024,
                heads: 8,
                ffn_dim: 2048,
                sentences: 10,
                words: 50,
                dropout: 0.6,
                ..desk.model
            },
            train: TrainConfig {
                learning_rate: 1e-5,
                ..desk.train
            },
            ablation: desk.ablation,
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Profile defaults, then the TOML document, then each `key=value`
    /// override. A `profile` key in the document picks the base profile
    /// unless `profile` is given explicitly.
    pub fn layered(profile: Option<Profile>, toml_text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let file: toml::Table = match toml_text {
            Some(text) => text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?,
            None => toml::Table::new(),
        };
        let from_file = match file.get("profile") {
            Some(toml::Value::String(s)) => Some(s.parse()?),
            Some(other) => {
                return Err(ConfigError::Invalid {
                    field: "profile".into(),
                    msg: format!("expected a string, got {other}"),
                })
            }
            None => None,
        };
        let base = Self::for_profile(profile.or(from_file).unwrap_or_default());
        let mut value = toml::Value::try_from(&base).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut value, toml::Value::Table(file));
        if let Some(p) = profile {
            set_path(&mut value, "profile", toml::Value::String(p.to_string()))?;
        }
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Invalid {
                field: o.clone(),
                msg: "override must look like key=value".into(),
            })?;
            set_path(&mut value, key.trim(), parse_scalar(raw.trim()))?;
        }
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |field: &str, msg: &str| ConfigError::Invalid {
            field: field.to_string(),
            msg: msg.to_string(),
        };
        self.synthetic().validate().map_err(|e| {
            let field = match &e {
                crate::data::DataError::OutOfRange { name, .. } => format!("data.{name}"),
                _ => "data.n".into(),
            };
            invalid(&field, &e.to_string())
        })?;
        Fractions(self.data.fractions)
            .validate()
            .map_err(|e| invalid("data.fractions", &e.to_string()))?;
        if self.tokenizer.target_size == 0 {
            return Err(invalid("tokenizer.target_size", "must be positive"));
        }
        self.model_config(1).validate().map_err(|e| match e {
            crate::model::ModelError::Config { field, msg } => {
                let field = match field {
                    "sentences" | "words" | "embed_dim" | "hidden_dim" | "heads" | "ffn_dim" | "dropout" | "ln_eps" => {
                        format!("model.{field}")
                    }
                    other => other.to_string(),
                };
                invalid(&field, &msg)
            }
            other => invalid("model", &other.to_string()),
        })?;
        self.train.validate().map_err(|e| match e {
            crate::train::TrainError::Config { field, msg } => invalid(&format!("train.{field}"), &msg),
            other => invalid("train", &other.to_string()),
        })?;
        if self.ablation.seeds.is_empty() {
            return Err(invalid("ablation.seeds", "needs at least one seed"));
        }
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n: self.data.n,
            signal_strength: self.data.signal_strength,
            pos_rate: self.data.pos_rate,
            blank_fraction: self.data.blank_fraction,
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.model.sentences, self.model.words)
    }

    pub fn ablation_flags(&self) -> Ablation {
        Ablation {
            use_bpe: self.model.use_bpe,
            use_mha: self.model.use_mha,
            use_grc: self.model.use_grc,
        }
    }

    pub fn set_ablation(&mut self, a: Ablation) {
        self.model.use_bpe = a.use_bpe;
        self.model.use_mha = a.use_mha;
        self.model.use_grc = a.use_grc;
    }

    pub fn tokenizer_kind(&self) -> TokenizerKind {
        if self.model.use_bpe {
            TokenizerKind::Bpe
        } else {
            TokenizerKind::Word
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            vocab_size,
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            heads: m.heads,
            ffn_dim: m.ffn_dim,
            grid: self.grid(),
            dropout: m.dropout,
            ablation: self.ablation_flags(),
            gelu: m.gelu,
            ln_eps: m.ln_eps,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let unknown = || ConfigError::Invalid {
        field: key.to_string(),
        msg: "no such config field".into(),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(unknown)?;
        if i + 1 == parts.len() {
            let slot = table.get_mut(*part).ok_or_else(unknown)?;
            *slot = coerce(slot, value, key)?;
            return Ok(());
        }
        node = table.get_mut(*part).ok_or_else(unknown)?;
    }
    Err(unknown())
}

/// Lets `1` stand for `1.0` in float fields and keeps strings typed.
fn coerce(current: &toml::Value, value: toml::Value, key: &str) -> Result<toml::Value> {
    use toml::Value as V;
    Ok(match (current, value) {
        (V::Float(_), V::Integer(i)) => V::Float(i as f64),
        (V::String(_), V::Integer(i)) => V::String(i.to_string()),
        (V::String(_), V::Float(f)) => V::String(f.to_string()),
        (V::String(_), V::Boolean(b)) => V::String(b.to_string()),
        (cur, v) if std::mem::discriminant(cur) == std::mem::discriminant(&v) => v,
        (cur, v) => {
            return Err(ConfigError::Invalid {
                field: key.to_string(),
                msg: format!("expected {}, got {}", cur.type_str(), v.type_str()),
            })
        }
    })
}

fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
