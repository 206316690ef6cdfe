use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Lowercases and keeps only whitespace-separated tokens made entirely of
/// alphabetic characters.
pub fn clean_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(str::to_lowercase)
        .filter(|t| t.chars().all(char::is_alphabetic))
        .collect()
}

/// Token to id map. Id 0 is the unknown token; the rest are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen = BTreeSet::new();
        for text in texts {
            seen.extend(clean_tokens(text));
        }
        seen.remove(UNK_TOKEN);
        let tokens = std::iter::once(UNK_TOKEN.to_string()).chain(seen).collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Cleans, maps and truncates a note. A note with no surviving tokens
    /// becomes a single unknown token so every document has length >= 1.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = clean_tokens(text)
            .iter()
            .take(max_len)
            .map(|t| self.id(t))
            .collect();
        if ids.is_empty() {
            ids.push(UNK_ID);
        }
        ids
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            tokens: Vec<String>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        if raw.tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Invalid("vocabulary must start with the unknown token".into()));
        }
        let vocab = Self::from_tokens(raw.tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Invalid("vocabulary has duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Reads word vectors in word2vec text format (an optional `count dim` header
/// line, then `word v1 .. vd` per line) and keeps those in the vocabulary.
pub fn read_word_vectors(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for (line, text) in crate::tabular::read_lines(path)? {
        let mut parts = text.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if line == 1 && values.len() == 1 && word.parse::<usize>().is_ok() {
            continue;
        }
        let Some(id) = vocab.get(word) else { continue };
        let vec = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        if vec.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("vector has {} values, expected {dim}", vec.len()),
            });
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "non-finite value".into(),
            });
        }
        out.push((id, vec));
    }
    Ok(out)
}
