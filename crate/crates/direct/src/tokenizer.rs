//! Whitespace tokenizer and vocabulary for the compact trainable encoder.
//!
//! The benchmark releases ship pre-tokenized text (tokens separated by single
//! spaces), so whitespace splitting recovers the original token stream. The
//! vocabulary is built from a corpus with frequency-then-lexicographic
//! ordering, which makes ids reproducible across runs.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

/// A token with its character offsets into the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub char_start: usize,
    pub char_end: usize,
}

/// Split on runs of whitespace, keeping character offsets.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token {
                    surface: text[s..i].to_string(),
                    char_start: s,
                    char_end: i,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            surface: text[s..].to_string(),
            char_start: s,
            char_end: text.len(),
        });
    }
    tokens
}

/// Token surfaces only, for places that do not need offsets.
pub fn tokenize_surfaces(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.surface).collect()
}

/// Fixed token-to-id mapping with the four special markers at the front.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Build from an iterator of token surfaces. Words are ordered by
    /// descending frequency, ties broken lexicographically.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut entries: Vec<(&str, usize)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut words: Vec<String> = vec![
            PAD.to_string(),
            UNK.to_string(),
            CLS.to_string(),
            SEP.to_string(),
        ];
        words.extend(entries.into_iter().map(|(w, _)| w.to_string()));
        Self::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocab { words, index }
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
    }
}
