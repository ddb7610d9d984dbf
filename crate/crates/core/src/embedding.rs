//! Hierarchical field embedding: one text field becomes a fixed `s × w × d`
//! block plus sentence and word masks.
//!
//! Whitespace tokens produced by the subword tokenizer are dropped before
//! the word axis is filled, so `w` counts content tokens only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Profile;
use crate::tensor::Tensor;
use crate::tokenizer::{Tokenizer, TokenizerKind, NAN_ID};

/// Sentence splitting on `'.'` only, trimmed, empty segments dropped.
pub fn split_sentences(field: &str) -> Vec<&str> {
    field.split('.').map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Fixed grid geometry of one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub sentences: usize,
    pub words: usize,
}

impl Grid {
    pub fn new(sentences: usize, words: usize) -> Self {
        Self { sentences, words }
    }

    pub fn cells(&self) -> usize {
        self.sentences * self.words
    }
}

/// Token ids of one field laid out on the `s × w` grid; `None` marks padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldTokens {
    pub grid: Grid,
    pub ids: Vec<Option<u32>>,
    pub sentence_mask: Vec<bool>,
    pub word_mask: Vec<bool>,
}

impl FieldTokens {
    pub fn real_sentences(&self) -> usize {
        self.sentence_mask.iter().filter(|&&m| m).count()
    }

    pub fn sentence_word_mask(&self, i: usize) -> &[bool] {
        &self.word_mask[i * self.grid.words..(i + 1) * self.grid.words]
    }

    pub fn sentence_ids(&self, i: usize) -> &[Option<u32>] {
        &self.ids[i * self.grid.words..(i + 1) * self.grid.words]
    }
}

fn sentence_tokens(tokenizer: &Tokenizer, sentence: &str) -> Vec<u32> {
    let ids = tokenizer.encode(sentence);
    match tokenizer {
        Tokenizer::Word(_) => ids,
        Tokenizer::Bpe(v) => ids
            .into_iter()
            .filter(|&id| !v.symbol(id).is_some_and(|s| s.chars().all(char::is_whitespace)))
            .collect(),
    }
}

/// Tokenizes a field onto the grid, keeping the first `s` sentences and the
/// first `w` tokens of each. A field with no content at all becomes the
/// single missing-value token, so every field has one real cell.
pub fn encode_field(field: &str, tokenizer: &Tokenizer, grid: Grid) -> FieldTokens {
    let mut ids = vec![None; grid.cells()];
    let mut sentence_mask = vec![false; grid.sentences];
    let mut word_mask = vec![false; grid.cells()];
    let kept = split_sentences(field)
        .into_iter()
        .map(|s| sentence_tokens(tokenizer, s))
        .filter(|t| !t.is_empty())
        .take(grid.sentences);
    for (i, tokens) in kept.enumerate() {
        sentence_mask[i] = true;
        for (j, id) in tokens.into_iter().take(grid.words).enumerate() {
            ids[i * grid.words + j] = Some(id);
            word_mask[i * grid.words + j] = true;
        }
    }
    if !sentence_mask[0] {
        ids[0] = Some(NAN_ID);
        sentence_mask[0] = true;
        word_mask[0] = true;
    }
    FieldTokens {
        grid,
        ids,
        sentence_mask,
        word_mask,
    }
}

/// Learnable `V × d` lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Tensor,
}

impl EmbeddingTable {
    /// Uniform in `[-1/√d, 1/√d]`.
    pub fn init(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let data = (0..vocab_size * dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            matrix: Tensor::new(vec![vocab_size, dim], data).expect("table dims are non-zero"),
        }
    }

    pub fn from_tensor(matrix: Tensor) -> Option<Self> {
        (matrix.rank() == 2).then_some(Self { matrix })
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let d = self.dim();
        &self.matrix.data()[id as usize * d..(id as usize + 1) * d]
    }
}

/// Embedded field: `block` is `[s, w, d]` with zero vectors at padding.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    pub block: Tensor,
    pub sentence_mask: Vec<bool>,
    pub word_mask: Vec<bool>,
}

impl FieldTensor {
    pub fn from_tokens(tokens: &FieldTokens, table: &EmbeddingTable) -> Self {
        let d = table.dim();
        let mut data = vec![0.0; tokens.grid.cells() * d];
        for (cell, id) in tokens.ids.iter().enumerate() {
            if let Some(id) = id {
                data[cell * d..(cell + 1) * d].copy_from_slice(table.row(*id));
            }
        }
        Self {
            block: Tensor::new(vec![tokens.grid.sentences, tokens.grid.words, d], data)
                .expect("grid dims are non-zero"),
            sentence_mask: tokens.sentence_mask.clone(),
            word_mask: tokens.word_mask.clone(),
        }
    }
}

pub fn embed_field(field: &str, tokenizer: &Tokenizer, table: &EmbeddingTable, grid: Grid) -> FieldTensor {
    FieldTensor::from_tokens(&encode_field(field, tokenizer, grid), table)
}

/// The four fields of a profile in model order: GCEA, GCEO, Leadership, PIQ.
pub fn encode_profile(profile: &Profile, tokenizer: &Tokenizer, grid: Grid) -> [FieldTokens; 4] {
    profile.fields().map(|f| encode_field(f, tokenizer, grid))
}

pub fn embed_profile(profile: &Profile, tokenizer: &Tokenizer, table: &EmbeddingTable, grid: Grid) -> [FieldTensor; 4] {
    encode_profile(profile, tokenizer, grid).map(|t| FieldTensor::from_tokens(&t, table))
}

/// Tokenizer training corpus: every field of every profile, one per line.
pub fn corpus_text(profiles: &[Profile]) -> String {
    let mut out = String::new();
    for p in profiles {
        for f in p.fields() {
            out.push_str(f);
            out.push('\n');
        }
    }
    out
}

pub fn train_tokenizer(kind: TokenizerKind, profiles: &[Profile], target_size: usize) -> crate::Result<Tokenizer> {
    Ok(Tokenizer::train(kind, &corpus_text(profiles), target_size)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_bpe;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn char_vocab() -> Tokenizer {
        Tokenizer::Bpe(train_bpe("abcdef .", 8).unwrap())
    }

    #[test]
    fn splits_on_periods_only() {
        assert_eq!(split_sentences("A. B. C."), vec!["A", "B", "C"]);
        assert_eq!(split_sentences("no period"), vec!["no period"]);
        assert_eq!(split_sentences("x.."), vec!["x"]);
        assert_eq!(split_sentences("Wow! Really? Yes."), vec!["Wow! Really? Yes"]);
        assert!(split_sentences("  . ").is_empty());
    }

    #[test]
    fn contentless_field_becomes_the_missing_token() {
        let tok = char_vocab();
        let table = EmbeddingTable::init(tok.vocab_size(), 4, &mut ChaCha8Rng::seed_from_u64(0));
        for text in ["", " . . "] {
            let ft = embed_field(text, &tok, &table, Grid::new(2, 3));
            assert_eq!(ft.block.shape(), &[2, 3, 4]);
            assert_eq!(&ft.block.data()[..4], table.row(NAN_ID));
            assert!(ft.block.data()[4..].iter().all(|&x| x == 0.0));
            assert_eq!(ft.sentence_mask, vec![true, false]);
            assert_eq!(ft.word_mask, vec![true, false, false, false, false, false]);
        }
    }

    #[test]
    fn exact_width_sentence_fills_one_row() {
        let tok = char_vocab();
        let t = encode_field("a b c", &tok, Grid::new(3, 3));
        assert_eq!(t.sentence_mask, vec![true, false, false]);
        assert_eq!(&t.word_mask[..3], &[true; 3]);
        assert!(t.ids[3..].iter().all(Option::is_none));
    }

    #[test]
    fn masks_are_monotone() {
        let tok = char_vocab();
        let t = encode_field("ab. c. d e f a b. a", &tok, Grid::new(3, 4));
        for row in t.word_mask.chunks(4) {
            assert!(row.windows(2).all(|w| w[0] >= w[1]));
        }
        assert!(t.sentence_mask.windows(2).all(|w| w[0] >= w[1]));
    }
}
