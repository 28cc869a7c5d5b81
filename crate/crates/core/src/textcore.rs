//! Tokenization, sentence splitting and vocabularies.
//!
//! Tokens are lowercased words; every character that is neither
//! alphanumeric nor whitespace becomes a token of its own. Sentence
//! splitting is deliberately naive: a segment ends at `.`, `!` or `?`
//! followed by whitespace, so abbreviations such as "Mr." also end a
//! sentence.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub type TokenSeq = Vec<String>;

pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((_, ch)) = chars.next() {
        if matches!(ch, '.' | '!' | '?') {
            if let Some(&(j, next)) = chars.peek() {
                if next.is_whitespace() {
                    let seg = text[start..j].trim();
                    if !seg.is_empty() {
                        out.push(seg.to_string());
                    }
                    start = j;
                }
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const SEP: u32 = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<sep>"];

/// Bijective token ↔ id map with five reserved ids (pad, unknown,
/// sequence-start, sequence-end, query separator) at 0..5.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Keeps the `max_size - 5` most frequent tokens, ties broken
    /// lexicographically. `max_size` counts the reserved entries.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a [String]>, max_size: usize) -> Result<Self> {
        if max_size <= RESERVED.len() {
            return Err(Error::invalid(format!("vocabulary size {max_size} leaves no room past the reserved ids")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seqs = 0;
        for seq in corpus {
            seqs += 1;
            for t in seq {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        if seqs == 0 {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());
        Ok(Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string())))
    }

    fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(words).collect();
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { ids, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_to_id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn id_to_token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.token_to_id(t)).collect()
    }

    /// Joins ids back into text, skipping reserved markers other than
    /// unknown.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i == UNK || i as usize >= RESERVED.len())
            .filter_map(|&i| self.id_to_token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Writes the reserved markers on the first five lines, then one token
    /// per line in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            writeln!(out, "{t}").unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        for (i, marker) in RESERVED.iter().enumerate() {
            if lines.get(i) != Some(marker) {
                return Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: format!("expected reserved marker {marker}"),
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (i, t) in lines.iter().enumerate().skip(RESERVED.len()) {
            if t.is_empty() || t.chars().any(char::is_whitespace) || !seen.insert(*t) {
                return Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: format!("bad vocabulary entry {t:?}"),
                });
            }
        }
        Ok(Self::from_tokens(lines[RESERVED.len()..].iter().map(|s| s.to_string())))
    }
}
