//! Straight-line BPE reference: the corpus is one flat list of symbols and
//! every iteration recounts every pair from scratch.

use std::collections::{BTreeMap, BTreeSet};

pub fn base_chars(corpus: &str) -> Vec<char> {
    corpus.chars().collect::<BTreeSet<char>>().into_iter().collect()
}

/// Returns the learned merges in order. Pairs that touch whitespace are never
/// counted; an occurrence is skipped only if the same pair was counted at the
/// immediately preceding position.
pub fn train(corpus: &str, target: usize) -> Vec<(String, String)> {
    let mut symbols: Vec<String> = corpus.chars().map(String::from).collect();
    let mut vocab: BTreeSet<String> = symbols.iter().cloned().collect();
    let mut merges = Vec::new();
    let is_space = |s: &str| s.chars().all(char::is_whitespace);
    while vocab.len() < target {
        let mut freq: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut last_counted: BTreeMap<(String, String), usize> = BTreeMap::new();
        for i in 0..symbols.len().saturating_sub(1) {
            let (a, b) = (&symbols[i], &symbols[i + 1]);
            if is_space(a) || is_space(b) {
                continue;
            }
            let pair = (a.clone(), b.clone());
            if i > 0 && last_counted.get(&pair) == Some(&(i - 1)) {
                continue;
            }
            last_counted.insert(pair.clone(), i);
            *freq.entry(pair).or_insert(0) += 1;
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
        let mut best: Option<(&(String, String), usize)> = None;
        for (pair, &f) in &freq {
            if best.map_or(true, |(_, bf)| f > bf) {
                best = Some((pair, f));
            }
        }
        let Some((pair, f)) = best else { break };
        if f < 2 {
            break;
        }
        let (a, b) = pair.clone();
        let merged = format!("{a}{b}");
        let mut next = Vec::with_capacity(symbols.len());
        let mut i = 0;
        while i < symbols.len() {
            if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                next.push(merged.clone());
                i += 2;
            } else {
                next.push(symbols[i].clone());
                i += 1;
            }
        }
        symbols = next;
        vocab.insert(merged);
        merges.push((a, b));
    }
    merges
}
