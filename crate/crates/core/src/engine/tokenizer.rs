// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const SEP: &str = "<sep>";
pub const BOS_ID: u32 = 0;
pub const SEP_ID: u32 = 1;

/// Whitespace tokenizer over a closed vocabulary.
///
/// Ids 0 and 1 are always `<bos>` and `<sep>`. Unknown words are an error,
/// never mapped to a catch-all token.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Tokenizer {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != BOS || tokens[1] != SEP {
            return Err(Error::Format(format!(
                "vocabulary must start with {BOS} {SEP}"
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary entry {t:?}")));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// Specials followed by `words` (deduplicated in order), truncated or
    /// padded with `w<i>` fillers to exactly `size` entries.
    pub fn with_words<'a>(words: impl IntoIterator<Item = &'a str>, size: usize) -> Self {
        let mut tokens = vec![BOS.to_string(), SEP.to_string()];
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for w in words {
            if tokens.len() >= size {
                break;
            }
            if seen.insert(w.to_string()) {
                tokens.push(w.to_string());
            }
        }
        let mut i = 0;
        while tokens.len() < size {
            let filler = format!("w{i}");
            if seen.insert(filler.clone()) {
                tokens.push(filler);
            }
            i += 1;
        }
        tokens.truncate(size.max(2));
        Self::new(tokens).expect("generated vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> Result<u32> {
        self.ids
            .get(word)
            .copied()
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode_words(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// `<bos> prompt... <sep> response...`
    pub fn encode_pair(&self, prompt: &str, response: &str) -> Result<Vec<u32>> {
        let mut ids = vec![BOS_ID];
        ids.extend(self.encode_words(prompt)?);
        ids.push(SEP_ID);
        ids.extend(self.encode_words(response)?);
        Ok(ids)
    }
}
