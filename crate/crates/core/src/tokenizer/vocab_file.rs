//! Line-oriented vocabulary files.
//!
//! ```text
//! bgm-han-bpe 1
//! target_size 500
//! symbols 41          <- full symbol table, one escaped symbol per line, id order
//! <unk>
//! NaN
//! \s
//! a
//! ...
//! merges 3            <- one "left right" pair per line, learned order
//! a b
//! ab c
//! ```
//!
//! Symbols are escaped so that the space separating a merge pair is
//! unambiguous: `\\`, `\s` (space), `\t`, `\n`, `\r`.

use std::path::Path;

use super::bpe::BpeVocab;
use super::word::WordVocab;
use super::{TokenizerError, NAN_TOKEN, RESERVED, UNK_SYMBOL};

pub(crate) const BPE_MAGIC: &str = "bgm-han-bpe 1";
pub(crate) const WORD_MAGIC: &str = "bgm-han-words 1";

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape(s: &str, line: usize) -> Result<String, TokenizerError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next() {
            Some('\\') => '\\',
            Some('s') => ' ',
            Some('t') => '\t',
            Some('n') => '\n',
            Some('r') => '\r',
            other => {
                return Err(TokenizerError::Parse {
                    line,
                    msg: format!("bad escape sequence \\{}", other.map(String::from).unwrap_or_default()),
                })
            }
        });
    }
    Ok(out)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str), TokenizerError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => Err(TokenizerError::Parse {
                line: self.last + 1,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, usize), TokenizerError> {
        let (n, l) = self.next_line(key)?;
        let value = l
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .and_then(|r| r.trim().parse::<usize>().ok())
            .ok_or_else(|| TokenizerError::Parse {
                line: n,
                msg: format!("expected `{key} <count>`, got {l:?}"),
            })?;
        Ok((n, value))
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> TokenizerError {
    TokenizerError::Parse { line, msg: msg.into() }
}

fn expect_magic(lines: &mut Lines<'_>, magic: &str) -> Result<(), TokenizerError> {
    let (n, l) = lines.next_line("header")?;
    if l != magic {
        return Err(parse_err(n, format!("expected header {magic:?}, got {l:?}")));
    }
    Ok(())
}

fn read_reserved(lines: &mut Lines<'_>) -> Result<(), TokenizerError> {
    for want in [UNK_SYMBOL, NAN_TOKEN] {
        let (n, l) = lines.next_line("reserved symbol")?;
        if l != want {
            return Err(parse_err(n, format!("expected reserved symbol {want:?}, got {l:?}")));
        }
    }
    Ok(())
}

impl BpeVocab {
    pub fn to_text(&self) -> String {
        let mut out = format!("{BPE_MAGIC}\ntarget_size {}\nsymbols {}\n", self.target_size(), self.len());
        for s in self.symbols() {
            out.push_str(&escape(s));
            out.push('\n');
        }
        out.push_str(&format!("merges {}\n", self.merges().len()));
        for (l, r) in self.merge_strings() {
            out.push_str(&format!("{} {}\n", escape(&l), escape(&r)));
        }
        out
    }

    /// Parses a vocabulary file. Base characters are read from the symbol
    /// table; merged symbols are re-derived by replaying the merge list and
    /// must agree with the table.
    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = Lines::new(text);
        expect_magic(&mut lines, BPE_MAGIC)?;
        let (_, target_size) = lines.keyed("target_size")?;
        let (sym_line, count) = lines.keyed("symbols")?;
        if count < RESERVED {
            return Err(parse_err(sym_line, "symbol table misses the reserved symbols"));
        }
        read_reserved(&mut lines)?;
        let mut table = Vec::with_capacity(count - RESERVED);
        for _ in RESERVED..count {
            let (n, l) = lines.next_line("symbol")?;
            table.push((n, unescape(l, n)?));
        }
        let (_, merge_count) = lines.keyed("merges")?;

        let base: Vec<char> = table
            .iter()
            .take_while(|(_, s)| s.chars().count() == 1)
            .map(|(_, s)| s.chars().next().unwrap())
            .collect();
        if base.windows(2).any(|w| w[0] >= w[1]) {
            return Err(parse_err(sym_line, "base characters must be sorted and unique"));
        }
        let mut vocab = BpeVocab::from_parts(base, target_size);
        for _ in 0..merge_count {
            let (n, l) = lines.next_line("merge")?;
            let mut parts = l.split(' ');
            let (Some(left), Some(right), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(parse_err(n, format!("expected `left right`, got {l:?}")));
            };
            let (left, right) = (unescape(left, n)?, unescape(right, n)?);
            let lookup = |s: &str| {
                vocab
                    .id(s)
                    .ok_or_else(|| parse_err(n, format!("merge references unknown symbol {s:?}")))
            };
            let (li, ri) = (lookup(&left)?, lookup(&right)?);
            vocab.push_merge(li, ri);
        }
        if let Some((n, l)) = lines.inner.next() {
            if !l.trim().is_empty() {
                return Err(parse_err(n + 1, "trailing content after merges"));
            }
        }
        let derived = &vocab.symbols()[RESERVED..];
        if derived.len() != table.len() {
            return Err(parse_err(
                sym_line,
                format!("symbol table lists {} symbols, merges derive {}", table.len(), derived.len()),
            ));
        }
        for ((n, want), got) in table.iter().zip(derived) {
            if want != got {
                return Err(parse_err(*n, format!("symbol {want:?} does not match derived {got:?}")));
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_text(&text)?)
    }
}

impl WordVocab {
    pub fn to_text(&self) -> String {
        let words = self.learned_words();
        let mut out = format!("{WORD_MAGIC}\ntarget_size {}\nwords {}\n", self.target_size(), words.len());
        for w in words {
            out.push_str(&escape(w));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = Lines::new(text);
        expect_magic(&mut lines, WORD_MAGIC)?;
        let (_, target_size) = lines.keyed("target_size")?;
        let (_, count) = lines.keyed("words")?;
        let mut words = Vec::with_capacity(count);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..count {
            let (n, l) = lines.next_line("word")?;
            let w = unescape(l, n)?;
            if w.is_empty() || w.chars().any(char::is_whitespace) || !seen.insert(w.clone()) {
                return Err(parse_err(n, format!("invalid or repeated word {l:?}")));
            }
            words.push(w);
        }
        Ok(WordVocab::from_words(words, target_size))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] TokenizerError),
}
