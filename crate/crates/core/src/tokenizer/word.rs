use std::collections::{BTreeMap, HashMap};

use super::{pieces, Piece, TokenizerError, NAN_ID, NAN_TOKEN, UNK_DECODED, UNK_ID, UNK_SYMBOL};

/// Whole-word vocabulary: the `target_size` most frequent whitespace-delimited
/// words of the training corpus. Whitespace itself is not tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVocab {
    words: Vec<String>,
    id_of: HashMap<String, u32>,
    target_size: usize,
}

impl WordVocab {
    pub(crate) fn from_words(words: Vec<String>, target_size: usize) -> Self {
        let mut all = vec![UNK_SYMBOL.to_string(), NAN_TOKEN.to_string()];
        all.extend(words);
        let id_of = all
            .iter()
            .enumerate()
            .skip(super::RESERVED)
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self {
            words: all,
            id_of,
            target_size,
        }
    }

    /// Keeps the most frequent words (ties broken alphabetically).
    pub fn train(corpus: &str, target_size: usize) -> Result<Self, TokenizerError> {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for piece in pieces(corpus) {
            if let Piece::Word(w) = piece {
                if w != NAN_TOKEN {
                    *freq.entry(w).or_insert(0) += 1;
                }
            }
        }
        if freq.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(target_size);
        Ok(Self::from_words(
            ranked.into_iter().map(|(w, _)| w.to_string()).collect(),
            target_size,
        ))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub(crate) fn learned_words(&self) -> &[String] {
        &self.words[super::RESERVED..]
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        pieces(text)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Word(w) if w == NAN_TOKEN => Some(NAN_ID),
                Piece::Word(w) => Some(self.id_of.get(w).copied().unwrap_or(UNK_ID)),
                Piece::Space(_) => None,
            })
            .collect()
    }

    /// Joins words with single spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                UNK_ID => parts.push(UNK_DECODED.to_string()),
                _ => parts.push(
                    self.words
                        .get(id as usize)
                        .ok_or(TokenizerError::IdOutOfRange {
                            id,
                            size: self.words.len(),
                        })?
                        .clone(),
                ),
            }
        }
        Ok(parts.join(" "))
    }
}
