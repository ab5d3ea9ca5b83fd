//! Token vocabulary with reserved special tokens.
//!
//! File format: one token per line, line number = id, reserved tokens first
//! (`[PAD]`, `[CLS]`, `[SEP]`, `[MASK]`, `[UNK]` at ids 0..5).
//! Tokenization is whitespace split + lowercase; no subwords.

use crate::error::{McvqaError, Result};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const UNK: usize = 4;

pub const RESERVED: [&str; 5] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"];

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.push(t.to_string());
        }
        v
    }

    fn push(&mut self, token: String) -> usize {
        let id = self.tokens.len();
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    /// Add a (lowercased) token if absent; returns its id either way.
    pub fn add(&mut self, token: &str) -> usize {
        let token = token.to_lowercase();
        match self.index.get(&token) {
            Some(&id) => id,
            None => self.push(token),
        }
    }

    /// Lookup with UNK fallback. Reserved tokens match case-sensitively,
    /// everything else is lowercased.
    pub fn id(&self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    /// Whitespace + lowercase tokenization into ids (UNK fallback).
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Tokenize, adding unseen tokens (vocabulary-building pass).
    pub fn tokenize_add(&mut self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.add(t)).collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut tokens = Vec::new();
        for line in BufReader::new(f).lines() {
            tokens.push(line?);
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(McvqaError::Vocabulary(format!(
                    "vocabulary file must start with reserved tokens {RESERVED:?}"
                )));
            }
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary { tokens, index })
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}
