use std::collections::HashMap;

use crate::nn::{PAD, UNK};
use crate::{Error, Result};

/// Token ↔ id map. Ids 0 and 1 are PAD and UNK; real tokens start at 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub const PAD_TOKEN: &'static str = "<pad>";
    pub const UNK_TOKEN: &'static str = "<unk>";

    pub fn new() -> Self {
        let tokens = vec![Self::PAD_TOKEN.to_string(), Self::UNK_TOKEN.to_string()];
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Vocabulary { tokens, index }
    }

    /// Appends a token, returning its id.
    pub fn push(&mut self, token: &str) -> Result<usize> {
        if self.index.contains_key(token) {
            return Err(Error::Invalid(format!("duplicate token `{token}`")));
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        Ok(id)
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut v = Self::new();
        for t in tokens {
            v.push(t)?;
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id for `token`, UNK when absent.
    pub fn id_or_unk(&self, token: &str) -> usize {
        match self.id(token) {
            Some(id) if id != PAD => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Real tokens (ids ≥ 2) in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens[2..].iter().map(String::as_str)
    }
}
