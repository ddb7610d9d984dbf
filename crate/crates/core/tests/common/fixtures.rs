//! Small configs and random inputs for model-level tests.

use bgm_han::embedding::{FieldTokens, Grid};
use bgm_han::model::{Ablation, ModelConfig};
use bgm_han::tensor::{GeluKind, Tensor};
use rand::Rng;

pub fn desk_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
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

/// Random field with prefix masks: at least one real sentence, each real
/// sentence with at least one real token.
pub fn random_field(rng: &mut impl Rng, grid: Grid, vocab: usize) -> FieldTokens {
    let (s, w) = (grid.sentences, grid.words);
    let mut ids = vec![None; s * w];
    let mut sentence_mask = vec![false; s];
    let mut word_mask = vec![false; s * w];
    for i in 0..rng.gen_range(1..=s) {
        sentence_mask[i] = true;
        for j in 0..rng.gen_range(1..=w) {
            ids[i * w + j] = Some(rng.gen_range(0..vocab as u32));
            word_mask[i * w + j] = true;
        }
    }
    FieldTokens {
        grid,
        ids,
        sentence_mask,
        word_mask,
    }
}

pub fn random_profile(rng: &mut impl Rng, grid: Grid, vocab: usize) -> [FieldTokens; 4] {
    std::array::from_fn(|_| random_field(rng, grid, vocab))
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).unwrap()
}
