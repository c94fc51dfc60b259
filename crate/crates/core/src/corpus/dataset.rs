use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{tokenize, Vocabulary};
use crate::error::{Error, Result};

/// One line of a JSONL dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    pub source: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_topics: Option<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_prompt: Option<String>,
}

/// Tokenised example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub source: Vec<usize>,
    pub summary: Vec<usize>,
    pub target_topics: Option<Vec<(usize, f64)>>,
    pub topic_prompt: Option<Vec<usize>>,
}

impl RawExample {
    pub fn source_tokens(&self) -> Vec<String> {
        tokenize(&self.source)
    }

    pub fn summary_tokens(&self) -> Vec<String> {
        tokenize(&self.summary)
    }

    pub fn encode(&self, vocab: &Vocabulary) -> Result<Example> {
        let source = vocab.encode(&self.source_tokens());
        if source.is_empty() {
            return Err(Error::invalid(format!("example `{}` has an empty source", self.id)));
        }
        if let Some(tt) = &self.target_topics {
            if tt.iter().any(|&(_, w)| w < 0.0 || !w.is_finite()) {
                return Err(Error::invalid(format!(
                    "example `{}` has a negative topic weight",
                    self.id
                )));
            }
        }
        Ok(Example {
            id: self.id.clone(),
            source,
            summary: vocab.encode(&self.summary_tokens()),
            target_topics: self.target_topics.clone(),
            topic_prompt: self
                .topic_prompt
                .as_ref()
                .map(|p| vocab.encode(&tokenize(p))),
        })
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RawExample>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: RawExample = serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Training examples need a non-empty summary.
pub fn encode_training(raw: &[RawExample], vocab: &Vocabulary) -> Result<Vec<Example>> {
    raw.iter()
        .map(|r| {
            let ex = r.encode(vocab)?;
            if ex.summary.is_empty() {
                return Err(Error::invalid(format!("example `{}` has an empty summary", r.id)));
            }
            Ok(ex)
        })
        .collect()
}

/// Order-sensitive SHA-256 over ids and sources, used to tie reports to a test set.
pub fn dataset_hash(raw: &[RawExample]) -> String {
    let mut h = Sha256::new();
    for r in raw {
        h.update(r.id.as_bytes());
        h.update([0u8]);
        h.update(r.source.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_with_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let rows = vec![
            RawExample {
                id: "1".into(),
                source: "The fire spread.".into(),
                summary: "fire".into(),
                target_topics: Some(vec![(2, 1.0)]),
                topic_prompt: Some("about fire".into()),
            },
            RawExample {
                id: "2".into(),
                source: "Rain.".into(),
                summary: "rain".into(),
                target_topics: None,
                topic_prompt: None,
            },
        ];
        write_jsonl(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.lines().nth(1).unwrap().contains("target_topics"));
        assert_eq!(read_jsonl(&p).unwrap(), rows);
    }

    #[test]
    fn encode_validates() {
        let v = Vocabulary::from_tokens(&["fire"]);
        let mut r = RawExample {
            id: "x".into(),
            source: "".into(),
            summary: "fire".into(),
            target_topics: None,
            topic_prompt: None,
        };
        assert!(r.encode(&v).is_err());
        r.source = "fire".into();
        r.target_topics = Some(vec![(0, -1.0)]);
        assert!(r.encode(&v).is_err());
        r.target_topics = None;
        r.summary = "".into();
        assert!(r.encode(&v).is_ok());
        assert!(encode_training(&[r], &v).is_err());
    }
}
