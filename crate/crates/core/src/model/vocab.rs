use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::kg::tokenize_normalized;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;
pub const FIRST_SENTINEL: usize = 5;
pub const NUM_SENTINELS: usize = 32;
/// First id available to regular tokens.
pub const FIRST_REGULAR: usize = FIRST_SENTINEL + NUM_SENTINELS;

pub fn sentinel(k: usize) -> usize {
    assert!(k < NUM_SENTINELS, "sentinel index {k} out of range");
    FIRST_SENTINEL + k
}

pub fn is_sentinel(id: usize) -> bool {
    (FIRST_SENTINEL..FIRST_REGULAR).contains(&id)
}

pub fn is_reserved(id: usize) -> bool {
    id < FIRST_REGULAR
}

/// Word-level vocabulary with fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

fn reserved_tokens() -> Vec<String> {
    let mut t: Vec<String> = ["<pad>", "<s>", "</s>", "<unk>", "<sep>"].iter().map(|s| s.to_string()).collect();
    t.extend((0..NUM_SENTINELS).map(|k| format!("<X{k}>")));
    t
}

impl Vocabulary {
    /// Counts normalized whitespace tokens; those seen at least `min_count`
    /// times enter in descending count order, ties lexicographic.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self, ModelError> {
        if corpus.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let reserved = reserved_tokens();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for tok in tokenize_normalized(line.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut regular: Vec<(String, usize)> =
            counts.into_iter().filter(|(t, c)| *c >= min_count.max(1) && !reserved.contains(t)).collect();
        regular.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = reserved;
        tokens.extend(regular.into_iter().map(|(t, _)| t));
        Ok(Self::from(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Normalizes, splits on whitespace and maps to ids (UNK for unknown words).
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize_normalized(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i).unwrap_or("<unk>")).collect::<Vec<_>>().join(" ")
    }
}
