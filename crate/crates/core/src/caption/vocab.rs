use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[CLS]"];

/// Token → id map. Ids are dense; 0..3 are reserved for PAD, UNK and CLS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRecord", into = "VocabularyRecord")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    max_len: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRecord {
    max_len: usize,
    tokens: Vec<String>,
}

impl TryFrom<VocabularyRecord> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRecord) -> Result<Self> {
        Self::from_tokens(r.tokens, r.max_len)
    }
}

impl From<Vocabulary> for VocabularyRecord {
    fn from(v: Vocabulary) -> Self {
        Self {
            max_len: v.max_len,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    /// Builds from pre-processed training captions only. Tokens are ordered
    /// by descending frequency, ties broken lexicographically.
    pub fn build<'a, I>(captions: I, max_len: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for caption in captions {
            for tok in caption {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !RESERVED.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w.to_string()))
            .collect();
        Self::from_tokens(tokens, max_len)
    }

    /// Rebuilds from the id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("caption max_len must be positive".into()));
        }
        if tokens.len() < RESERVED.len() || tokens[..3] != RESERVED {
            return Err(Error::Integrity(
                "vocabulary does not start with [PAD] [UNK] [CLS]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        Ok(Self {
            tokens,
            index,
            max_len,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[CLS, ids..., PAD...]`, always exactly `max_len` long. Unknown
    /// tokens map to UNK; overflow is truncated.
    pub fn encode_ids(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(CLS);
        ids.extend(
            tokens
                .iter()
                .take(self.max_len - 1)
                .map(|t| self.id(t).unwrap_or(UNK)),
        );
        ids.resize(self.max_len, PAD);
        ids
    }
}
