use std::collections::{BTreeMap, HashMap};

use super::{pieces, Piece, TokenizerError, NAN_ID, NAN_TOKEN, RESERVED, UNK_DECODED, UNK_ID, UNK_SYMBOL};

/// Learned BPE vocabulary.
///
/// Ids `0` and `1` are the reserved UNK and NaN symbols, followed by the
/// sorted base characters of the training corpus and then every merged symbol
/// in the order it was learned. `target_size` bounds the base characters plus
/// merged symbols; the two reserved ids sit outside that budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BpeVocab {
    symbols: Vec<String>,
    merges: Vec<(u32, u32)>,
    id_of: HashMap<String, u32>,
    merge_rank: HashMap<(u32, u32), usize>,
    base_count: usize,
    target_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Character count of the encoded text.
    pub source_len: usize,
}

impl BpeVocab {
    pub(crate) fn from_parts(base: Vec<char>, target_size: usize) -> Self {
        let mut symbols = vec![UNK_SYMBOL.to_string(), NAN_TOKEN.to_string()];
        let mut id_of = HashMap::new();
        for c in &base {
            id_of.insert(c.to_string(), symbols.len() as u32);
            symbols.push(c.to_string());
        }
        Self {
            symbols,
            merges: Vec::new(),
            id_of,
            merge_rank: HashMap::new(),
            base_count: base.len(),
            target_size,
        }
    }

    /// Records a merge rule and returns the id of the merged symbol, reusing
    /// an existing id when the concatenation is already in the vocabulary.
    pub(crate) fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let merged = format!("{}{}", self.symbols[left as usize], self.symbols[right as usize]);
        let id = match self.id_of.get(&merged) {
            Some(&id) => id,
            None => {
                let id = self.symbols.len() as u32;
                self.id_of.insert(merged.clone(), id);
                self.symbols.push(merged);
                id
            }
        };
        self.merge_rank.insert((left, right), self.merges.len());
        self.merges.push((left, right));
        id
    }

    /// Total ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Base characters plus merged symbols (the quantity `target_size` bounds).
    pub fn learned_len(&self) -> usize {
        self.symbols.len() - RESERVED
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn base_count(&self) -> usize {
        self.base_count
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.id_of.get(symbol).copied()
    }

    /// Merge rules as symbol-id pairs, in learned order.
    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Merge rules as symbol strings, in learned order.
    pub fn merge_strings(&self) -> Vec<(String, String)> {
        self.merges
            .iter()
            .map(|&(l, r)| (self.symbols[l as usize].clone(), self.symbols[r as usize].clone()))
            .collect()
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        for piece in pieces(text) {
            match piece {
                Piece::Space(c) => ids.push(self.char_id(c)),
                Piece::Word(w) if w == NAN_TOKEN => ids.push(NAN_ID),
                Piece::Word(w) => self.encode_word(w, &mut ids),
            }
        }
        TokenSequence {
            ids,
            source_len: text.chars().count(),
        }
    }

    fn char_id(&self, c: char) -> u32 {
        let mut buf = [0u8; 4];
        self.id_of.get(&*c.encode_utf8(&mut buf)).copied().unwrap_or(UNK_ID)
    }

    /// Applies the merge rules to one word in learned order: repeatedly take
    /// the earliest-learned rule (after the last one applied) that matches an
    /// adjacent pair, and rewrite all its occurrences left to right.
    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = word.chars().map(|c| self.char_id(c)).collect();
        let mut floor = 0usize;
        loop {
            let next = syms
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])).copied())
                .filter(|&rank| rank >= floor)
                .min();
            let Some(rank) = next else { break };
            let (l, r) = self.merges[rank];
            let merged = self.id_of[&format!("{}{}", self.symbols[l as usize], self.symbols[r as usize])];
            syms = merge_pair(&syms, l, r, merged);
            floor = rank + 1;
        }
        out.extend(syms);
    }

    pub fn decode(&self, seq: &TokenSequence) -> Result<String, TokenizerError> {
        self.decode_ids(&seq.ids)
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            match id {
                UNK_ID => out.push(UNK_DECODED),
                _ => out.push_str(self.symbols.get(id as usize).ok_or(TokenizerError::IdOutOfRange {
                    id,
                    size: self.symbols.len(),
                })?),
            }
        }
        Ok(out)
    }
}

/// Rewrites every non-overlapping occurrence of `(left, right)`, scanning
/// left to right.
pub(crate) fn merge_pair(syms: &[u32], left: u32, right: u32, merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

/// Counts adjacent pairs without overlap: an occurrence of a pair is skipped
/// when it shares its left symbol with the counted occurrence just before it
/// (so "aaa" holds one ("a", "a") and "aaaa" holds two).
pub(crate) fn count_pairs(syms: &[u32], weight: usize, counts: &mut HashMap<(u32, u32), usize>) {
    let mut prev_counted: Option<(u32, u32)> = None;
    for w in syms.windows(2) {
        let pair = (w[0], w[1]);
        if prev_counted == Some(pair) {
            prev_counted = None;
            continue;
        }
        *counts.entry(pair).or_insert(0) += weight;
        prev_counted = Some(pair);
    }
}

/// Learns a BPE vocabulary of at most `target_size` base-plus-merged symbols.
///
/// Pairs are counted inside whitespace-delimited words only; whitespace
/// characters are base symbols that never merge. Each iteration merges the
/// most frequent pair (ties go to the lexicographically smallest left, then
/// right symbol). Training stops early once no pair occurs at least twice.
pub fn train_bpe(corpus: &str, target_size: usize) -> Result<BpeVocab, TokenizerError> {
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut base: Vec<char> = corpus.chars().collect();
    base.sort_unstable();
    base.dedup();
    if target_size < base.len() {
        return Err(TokenizerError::TargetTooSmall {
            target: target_size,
            base: base.len(),
        });
    }
    let mut vocab = BpeVocab::from_parts(base, target_size);

    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for piece in pieces(corpus) {
        if let Piece::Word(w) = piece {
            if w != NAN_TOKEN {
                *freq.entry(w).or_insert(0) += 1;
            }
        }
    }
    let mut words: Vec<(Vec<u32>, usize)> = freq
        .into_iter()
        .map(|(w, n)| (w.chars().map(|c| vocab.char_id(c)).collect(), n))
        .collect();

    while vocab.learned_len() < target_size {
        let mut counts = HashMap::new();
        for (syms, n) in &words {
            count_pairs(syms, *n, &mut counts);
        }
        let best = counts.into_iter().max_by(|(pa, fa), (pb, fb)| {
            fa.cmp(fb).then_with(|| {
                let key = |p: &(u32, u32)| (vocab.symbols[p.0 as usize].clone(), vocab.symbols[p.1 as usize].clone());
                // smaller strings win ties, so they must compare as "greater"
                key(pb).cmp(&key(pa))
            })
        });
        let Some(((l, r), f)) = best else { break };
        if f < 2 {
            break;
        }
        let merged = vocab.push_merge(l, r);
        for (syms, _) in words.iter_mut() {
            if syms.windows(2).any(|w| w[0] == l && w[1] == r) {
                *syms = merge_pair(syms, l, r, merged);
            }
        }
    }
    Ok(vocab)
}
