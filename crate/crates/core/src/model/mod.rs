//! Three-level hierarchical attention classifier.
//!
//! Real sentences of every field in a batch go through the token-level block
//! together, are scattered back onto the sentence grid, pooled per field by
//! the sentence-level block, and the four field vectors of each profile feed
//! the field-level block and a single-logit head.

mod layers;

pub use layers::{gated_residual, level_block, multi_head_attention, BlockOptions, BlockVars, GrnVars, MhaVars};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FIELD_NAMES;
use crate::embedding::{FieldTensor, FieldTokens, Grid};
use crate::tensor::{GeluKind, Graph, Tensor, TensorError, Var};

pub const LEVELS: [&str; 3] = ["token", "sentence", "field"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {field} {msg}")]
    Config { field: &'static str, msg: String },
    #[error("profile {profile}: field {field} has no tokens")]
    EmptyField { profile: usize, field: &'static str },
    #[error("input grid {got:?} does not match the model grid {want:?}")]
    GridMismatch { want: Grid, got: Grid },
    #[error("parameter {name}: {msg}")]
    Param { name: String, msg: String },
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_bpe: bool,
    pub use_mha: bool,
    pub use_grc: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        use_bpe: true,
        use_mha: true,
        use_grc: true,
    };
    pub const BASE: Ablation = Ablation {
        use_bpe: false,
        use_mha: false,
        use_grc: false,
    };
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub grid: Grid,
    pub dropout: f64,
    pub ablation: Ablation,
    pub gelu: GeluKind,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Heads actually used: one when multi-head attention is ablated.
    pub fn effective_heads(&self) -> usize {
        if self.ablation.use_mha {
            self.heads
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field, msg: &str| Err(ModelError::Config { field, msg: msg.to_string() });
        for (field, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("sentences", self.grid.sentences),
            ("words", self.grid.words),
        ] {
            if v == 0 {
                return err(field, "must be positive");
            }
        }
        if self.hidden_dim % self.effective_heads() != 0 {
            return err("heads", "must divide hidden_dim");
        }
        if self.ffn_dim < self.hidden_dim {
            return err("ffn_dim", "must be at least hidden_dim");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("dropout", "must lie in [0, 1)");
        }
        if !(self.ln_eps > 0.0) {
            return err("ln_eps", "must be positive");
        }
        Ok(())
    }

    /// Closed-form parameter count for this configuration.
    pub fn param_count(&self) -> usize {
        let (v, e, d, f) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.ffn_dim);
        let proj = if e != d { e * d } else { 0 };
        let gate = if self.ablation.use_grc { d } else { 0 };
        let block = 2 * d + 4 * d * d + gate + d * f + f + f * d + d + 2 * d;
        v * e + proj + 3 * block + d + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Whether weight decay applies.
    pub decay: bool,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BlockIdx {
    ln_gain: usize,
    ln_bias: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    gamma: Option<usize>,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    gain: usize,
    bias: usize,
}

impl BlockIdx {
    fn vars(&self, p: &[Var]) -> BlockVars {
        BlockVars {
            ln_gain: p[self.ln_gain],
            ln_bias: p[self.ln_bias],
            mha: MhaVars {
                wq: p[self.wq],
                wk: p[self.wk],
                wv: p[self.wv],
                wo: p[self.wo],
            },
            grn: GrnVars {
                gamma: self.gamma.map(|i| p[i]),
                w1: p[self.w1],
                b1: p[self.b1],
                w2: p[self.w2],
                b2: p[self.b2],
                gain: p[self.gain],
                bias: p[self.bias],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    embedding: usize,
    input_proj: Option<usize>,
    blocks: [BlockIdx; 3],
    head_w: usize,
    head_b: usize,
}

struct Builder<'a> {
    params: Vec<Param>,
    source: &'a mut dyn FnMut(&str, &[usize], Init) -> Result<Tensor>,
}

impl Builder<'_> {
    fn add(&mut self, name: String, shape: &[usize], init: Init, decay: bool) -> Result<usize> {
        let value = (self.source)(&name, shape, init)?;
        self.params.push(Param { name, value, decay });
        Ok(self.params.len() - 1)
    }

    fn block(&mut self, cfg: &ModelConfig, level: &str) -> Result<BlockIdx> {
        let (d, f) = (cfg.hidden_dim, cfg.ffn_dim);
        let wd = Init::Uniform(1.0 / (d as f64).sqrt());
        let wf = Init::Uniform(1.0 / (f as f64).sqrt());
        Ok(BlockIdx {
            ln_gain: self.add(format!("{level}.ln.gain"), &[d], Init::Ones, false)?,
            ln_bias: self.add(format!("{level}.ln.bias"), &[d], Init::Zeros, false)?,
            wq: self.add(format!("{level}.mha.wq"), &[d, d], wd, true)?,
            wk: self.add(format!("{level}.mha.wk"), &[d, d], wd, true)?,
            wv: self.add(format!("{level}.mha.wv"), &[d, d], wd, true)?,
            wo: self.add(format!("{level}.mha.wo"), &[d, d], wd, true)?,
            gamma: if cfg.ablation.use_grc {
                Some(self.add(format!("{level}.grn.gamma"), &[d], Init::Ones, false)?)
            } else {
                None
            },
            w1: self.add(format!("{level}.grn.w1"), &[d, f], wd, true)?,
            b1: self.add(format!("{level}.grn.b1"), &[f], Init::Zeros, false)?,
            w2: self.add(format!("{level}.grn.w2"), &[f, d], wf, true)?,
            b2: self.add(format!("{level}.grn.b2"), &[d], Init::Zeros, false)?,
            gain: self.add(format!("{level}.grn.ln.gain"), &[d], Init::Ones, false)?,
            bias: self.add(format!("{level}.grn.ln.bias"), &[d], Init::Zeros, false)?,
        })
    }

    fn build(mut self, cfg: &ModelConfig) -> Result<(Vec<Param>, Layout)> {
        let (e, d) = (cfg.embed_dim, cfg.hidden_dim);
        let embedding = self.add(
            "embedding".into(),
            &[cfg.vocab_size, e],
            Init::Uniform(1.0 / (e as f64).sqrt()),
            true,
        )?;
        let input_proj = if e != d {
            Some(self.add("input_proj".into(), &[e, d], Init::Uniform(1.0 / (e as f64).sqrt()), true)?)
        } else {
            None
        };
        let blocks = [
            self.block(cfg, LEVELS[0])?,
            self.block(cfg, LEVELS[1])?,
            self.block(cfg, LEVELS[2])?,
        ];
        let head_w = self.add("head.w".into(), &[d, 1], Init::Uniform(1.0 / (d as f64).sqrt()), true)?;
        let head_b = self.add("head.b".into(), &[1], Init::Zeros, false)?;
        Ok((
            self.params,
            Layout {
                embedding,
                input_proj,
                blocks,
                head_w,
                head_b,
            },
        ))
    }
}

/// What the forward pass reads from: token ids looked up in the trainable
/// table, or pre-embedded blocks that enter the graph as constants.
#[derive(Debug, Clone, Copy)]
pub enum Inputs<'a> {
    Tokens(&'a [[FieldTokens; 4]]),
    Blocks(&'a [[FieldTensor; 4]]),
}

impl Inputs<'_> {
    fn len(&self) -> usize {
        match self {
            Inputs::Tokens(t) => t.len(),
            Inputs::Blocks(b) => b.len(),
        }
    }

    fn masks(&self, p: usize, f: usize) -> (&[bool], &[bool]) {
        match self {
            Inputs::Tokens(t) => (&t[p][f].sentence_mask, &t[p][f].word_mask),
            Inputs::Blocks(b) => (&b[p][f].sentence_mask, &b[p][f].word_mask),
        }
    }

    fn grid(&self, p: usize, f: usize) -> Grid {
        match self {
            Inputs::Tokens(t) => t[p][f].grid,
            Inputs::Blocks(b) => {
                let s = b[p][f].block.shape();
                Grid::new(s[0], s[1])
            }
        }
    }
}

/// Variables of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[batch]` probabilities.
    pub probs: Var,
    /// One variable per model parameter, in parameter order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    layout: Layout,
}

impl Model {
    /// Fresh model with seeded initialization: uniform `±1/√fan_in` for
    /// weight matrices, `±1/√d` for embeddings, unit gains and gates, zero
    /// biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut source = |_: &str, shape: &[usize], init: Init| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Uniform(b) => (0..n).map(|_| rng.gen_range(-b..=b)).collect(),
            };
            Ok(Tensor::new(shape.to_vec(), data)?)
        };
        let (params, layout) = Builder {
            params: Vec::new(),
            source: &mut source,
        }
        .build(&config)?;
        Ok(Self { config, params, layout })
    }

    /// Rebuilds a model from named tensors, which must match this config's
    /// parameter list exactly (names, order and shapes).
    pub fn from_params(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let mut it = tensors.into_iter();
        let mut source = |name: &str, shape: &[usize], _: Init| -> Result<Tensor> {
            let err = |msg: String| ModelError::Param {
                name: name.to_string(),
                msg,
            };
            let (got_name, t) = it.next().ok_or_else(|| err("missing".into()))?;
            if got_name != name {
                return Err(err(format!("found {got_name:?} in its place")));
            }
            if t.shape() != shape {
                return Err(err(format!("shape {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(err("non-finite values".into()));
            }
            Ok(t)
        };
        let (params, layout) = Builder {
            params: Vec::new(),
            source: &mut source,
        }
        .build(&config)?;
        if let Some((name, _)) = it.next() {
            return Err(ModelError::Param {
                name,
                msg: "not part of this model".into(),
            });
        }
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn block_options(&self) -> BlockOptions {
        BlockOptions {
            heads: self.config.effective_heads(),
            gelu: self.config.gelu,
            eps: self.config.ln_eps,
        }
    }

    fn dropout<R: Rng>(&self, g: &mut Graph, x: Var, rng: Option<&mut R>) -> Result<Var> {
        let rate = self.config.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let mask = (0..g.value(x).len())
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                Ok(g.mul_const(x, mask)?)
            }
            _ => Ok(x),
        }
    }

    /// Records the full forward pass. Dropout is active only when `rng` is
    /// given.
    pub fn forward<R: Rng>(&self, g: &mut Graph, inputs: Inputs<'_>, mut rng: Option<&mut R>) -> Result<Forward> {
        let batch = inputs.len();
        if batch == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let grid = self.config.grid;
        let (s, w, e) = (grid.sentences, grid.words, self.config.embed_dim);
        let d = self.config.hidden_dim;

        let mut positions = Vec::new();
        let mut sentences = Vec::new();
        let mut word_mask = Vec::new();
        let mut sentence_mask = Vec::with_capacity(batch * 4 * s);
        for p in 0..batch {
            for f in 0..4 {
                let got = inputs.grid(p, f);
                if got != grid {
                    return Err(ModelError::GridMismatch { want: grid, got });
                }
                let (smask, wmask) = inputs.masks(p, f);
                if !smask.iter().any(|&m| m) {
                    return Err(ModelError::EmptyField {
                        profile: p,
                        field: FIELD_NAMES[f],
                    });
                }
                for (i, &real) in smask.iter().enumerate() {
                    if real {
                        positions.push((p * 4 + f) * s + i);
                        sentences.push((p, f, i));
                        word_mask.extend_from_slice(&wmask[i * w..(i + 1) * w]);
                    }
                }
                sentence_mask.extend_from_slice(smask);
            }
        }
        let r = sentences.len();

        let params: Vec<Var> = self.params.iter().map(|p| g.param(p.value.clone())).collect();
        let l = &self.layout;
        let x = match inputs {
            Inputs::Tokens(t) => {
                let ids = sentences
                    .iter()
                    .flat_map(|&(p, f, i)| t[p][f].sentence_ids(i).iter().map(|id| id.map(|v| v as usize)))
                    .collect();
                let rows = g.gather(params[l.embedding], ids)?;
                g.reshape(rows, vec![r, w, e])?
            }
            Inputs::Blocks(b) => {
                let mut data = Vec::with_capacity(r * w * e);
                for &(p, f, i) in &sentences {
                    data.extend_from_slice(&b[p][f].block.data()[i * w * e..(i + 1) * w * e]);
                }
                g.constant(Tensor::new(vec![r, w, e], data)?)
            }
        };
        let x = match l.input_proj {
            Some(proj) => g.matmul(x, params[proj])?,
            None => x,
        };

        let opts = self.block_options();
        let tokens = level_block(g, x, &l.blocks[0].vars(&params), opts, &word_mask)?;
        let tokens = self.dropout(g, tokens, rng.as_deref_mut())?;
        let grid_rows = g.scatter_rows(tokens, positions, batch * 4 * s)?;
        let grid_rows = g.reshape(grid_rows, vec![batch * 4, s, d])?;
        let fields = level_block(g, grid_rows, &l.blocks[1].vars(&params), opts, &sentence_mask)?;
        let fields = self.dropout(g, fields, rng.as_deref_mut())?;
        let fields = g.reshape(fields, vec![batch, 4, d])?;
        let profile = level_block(g, fields, &l.blocks[2].vars(&params), opts, &vec![true; batch * 4])?;
        let profile = self.dropout(g, profile, rng.as_deref_mut())?;
        let logit = g.matmul(profile, params[l.head_w])?;
        let logit = g.add_row(logit, params[l.head_b])?;
        let probs = g.sigmoid(logit)?;
        let probs = g.reshape(probs, vec![batch])?;
        Ok(Forward { probs, params })
    }

    /// Inference probabilities, no dropout.
    pub fn predict(&self, inputs: Inputs<'_>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward::<ChaCha8Rng>(&mut g, inputs, None)?;
        Ok(g.value(out.probs).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            embed_dim: 8,
            hidden_dim: 8,
            heads: 2,
            ffn_dim: 16,
            grid: Grid::new(2, 3),
            dropout: 0.0,
            ablation: Ablation::FULL,
            gelu: GeluKind::Exact,
            ln_eps: 1e-5,
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        for ablation in [Ablation::FULL, Ablation::BASE] {
            for embed_dim in [8, 6] {
                let cfg = ModelConfig {
                    ablation,
                    embed_dim,
                    ..tiny_config()
                };
                let m = Model::new(cfg.clone(), 0).unwrap();
                assert_eq!(m.num_parameters(), cfg.param_count());
            }
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let cfg = ModelConfig {
            heads: 3,
            ..tiny_config()
        };
        let msg = Model::new(cfg, 0).unwrap_err().to_string();
        assert!(msg.contains("heads"), "{msg}");
        let cfg = ModelConfig {
            heads: 3,
            ablation: Ablation {
                use_mha: false,
                ..Ablation::FULL
            },
            ..tiny_config()
        };
        assert!(Model::new(cfg, 0).is_ok());
    }

    #[test]
    fn from_params_round_trips_and_rejects_mismatch() {
        let m = Model::new(tiny_config(), 4).unwrap();
        let named: Vec<_> = m.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        assert_eq!(Model::from_params(tiny_config(), named.clone()).unwrap(), m);
        let mut short = named.clone();
        short.pop();
        assert!(Model::from_params(tiny_config(), short).is_err());
        let wider = ModelConfig {
            hidden_dim: 4,
            ffn_dim: 8,
            ..tiny_config()
        };
        assert!(Model::from_params(wider, named).is_err());
    }
}
