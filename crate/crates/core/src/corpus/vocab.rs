use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;
pub const NUM_RESERVED: usize = 5;
pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<s>", "</s>", "<unk>", "<sep>"];

/// Bidirectional token ↔ id map. Ids `0..NUM_RESERVED` are reserved; every
/// other id maps to exactly one token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    doc_freq: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Tokens with corpus frequency `>= min_count`, ordered by descending
    /// frequency then lexicographically.
    pub fn build<'a, I, D>(docs: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        if min_count == 0 {
            return Err(Error::invalid("min_count must be at least 1"));
        }
        let mut freq: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut n_docs = 0;
        for doc in docs {
            n_docs += 1;
            let mut seen = std::collections::HashSet::new();
            for tok in doc {
                let e = freq.entry(tok.as_str()).or_default();
                e.0 += 1;
                if seen.insert(tok.as_str()) {
                    e.1 += 1;
                }
            }
        }
        if n_docs == 0 || freq.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(&str, usize, usize)> = freq
            .into_iter()
            .filter(|(t, (c, _))| *c >= min_count && !RESERVED_TOKENS.contains(t))
            .map(|(t, (c, d))| (t, c, d))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut doc_freq = vec![0; NUM_RESERVED];
        for (t, _, d) in kept {
            tokens.push(t.to_string());
            doc_freq.push(d);
        }
        Ok(Self::from_parts(tokens, doc_freq))
    }

    /// Vocabulary over an explicit token list (reserved tokens are prepended).
    pub fn from_tokens<S: AsRef<str>>(words: &[S]) -> Self {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|w| w.as_ref().to_string()));
        let n = tokens.len();
        Self::from_parts(tokens, vec![0; n])
    }

    fn from_parts(tokens: Vec<String>, doc_freq: Vec<usize>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            doc_freq,
            index,
        }
    }

    /// Restores the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq.get(id).copied().unwrap_or(0)
    }

    pub fn is_reserved(id: usize) -> bool {
        id < NUM_RESERVED
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED_TOKENS[UNK]).to_string())
            .collect()
    }

    /// Decodes and drops reserved tokens, joining with spaces.
    pub fn decode_text(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| !Self::is_reserved(i))
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Term counts over the vocabulary; reserved ids stay zero.
pub fn bow(doc: &[usize], vocab_size: usize) -> Vec<f64> {
    let mut counts = vec![0.0; vocab_size];
    for &id in doc {
        if !Vocabulary::is_reserved(id) && id < vocab_size {
            counts[id] += 1.0;
        }
    }
    counts
}

/// Counts divided by their total; zero vector stays zero.
pub fn l1_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}
