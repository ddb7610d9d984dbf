//! Subword (BPE) and whitespace-word tokenizers.
//!
//! Both share two reserved ids: [`UNK_ID`] for characters or words never seen
//! in training, and [`NAN_ID`] for the literal missing-field marker
//! [`NAN_TOKEN`], which always encodes to exactly one token.

mod bpe;
mod vocab_file;
mod word;

pub use bpe::{train_bpe, BpeVocab, TokenSequence};
pub use vocab_file::LoadError;
pub use word::WordVocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const UNK_ID: u32 = 0;
pub const NAN_ID: u32 = 1;
pub const UNK_SYMBOL: &str = "<unk>";
/// Literal that replaces missing profile fields.
pub const NAN_TOKEN: &str = "NaN";
/// What an UNK id decodes to.
pub const UNK_DECODED: char = '\u{FFFD}';
pub(crate) const RESERVED: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("cannot train a tokenizer on an empty corpus")]
    EmptyCorpus,
    #[error("target vocabulary size {target} is smaller than the {base} base characters")]
    TargetTooSmall { target: usize, base: usize },
    #[error("token id {id} is out of range for a vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("vocab file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Pieces of a text as seen by the tokenizers: whitespace-delimited words
/// and the individual whitespace characters between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Piece<'a> {
    Word(&'a str),
    Space(char),
}

pub(crate) fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Piece::Word(&text[s..i]));
            }
            out.push(Piece::Space(c));
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Piece::Word(&text[s..]));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    Bpe,
    Word,
}

/// The tokenizer a model was trained with.
#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    Bpe(BpeVocab),
    Word(WordVocab),
}

impl Tokenizer {
    pub fn train(kind: TokenizerKind, corpus: &str, target_size: usize) -> Result<Self, TokenizerError> {
        Ok(match kind {
            TokenizerKind::Bpe => Tokenizer::Bpe(train_bpe(corpus, target_size)?),
            TokenizerKind::Word => Tokenizer::Word(WordVocab::train(corpus, target_size)?),
        })
    }

    pub fn kind(&self) -> TokenizerKind {
        match self {
            Tokenizer::Bpe(_) => TokenizerKind::Bpe,
            Tokenizer::Word(_) => TokenizerKind::Word,
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        match self {
            Tokenizer::Bpe(v) => v.encode(text).ids,
            Tokenizer::Word(v) => v.encode(text),
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        match self {
            Tokenizer::Bpe(v) => v.decode_ids(ids),
            Tokenizer::Word(v) => v.decode(ids),
        }
    }

    /// Number of embedding rows the tokenizer needs, reserved ids included.
    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::Bpe(v) => v.len(),
            Tokenizer::Word(v) => v.len(),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            Tokenizer::Bpe(v) => v.to_text(),
            Tokenizer::Word(v) => v.to_text(),
        }
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        if text.starts_with(vocab_file::WORD_MAGIC) {
            Ok(Tokenizer::Word(WordVocab::from_text(text)?))
        } else {
            Ok(Tokenizer::Bpe(BpeVocab::from_text(text)?))
        }
    }
}
