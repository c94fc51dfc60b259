//! Binary checkpoint container shared by the LDA, FFN, and summarizer.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "TSUMCKPT"
//! version      u32       FORMAT_VERSION
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON
//! tensors      f64 LE values, concatenated in header order
//! ```
//!
//! The header is an object with `kind`, `meta` (caller-defined) and
//! `tensors: [{name, shape}]`. Loading checks the magic, the version, the
//! `kind`, and that the payload length matches the declared shapes exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"TSUMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
    /// Provenance of the run that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<Value>,
}

pub fn encode(kind: &str, meta: &impl Serialize, tensors: &ParamSet) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        meta: serde_json::to_value(meta)?,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        run: None,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + tensors.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn split_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    Ok((serde_json::from_slice(&body[..hlen])?, &body[hlen..]))
}

pub fn decode<M: for<'de> Deserialize<'de>>(kind: &str, bytes: &[u8]) -> Result<(M, ParamSet)> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let (header, mut payload) = split_header(bytes)?;
    if header.kind != kind {
        return Err(bad(format!("expected a `{kind}` checkpoint, found `{}`", header.kind)));
    }
    let expected: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 8)
        .sum();
    if payload.len() != expected {
        return Err(bad(format!(
            "payload has {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let mut params = ParamSet::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            payload.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(entry.name, Tensor::new(entry.shape, data)?);
    }
    let meta = serde_json::from_value(header.meta)?;
    Ok((meta, params))
}

pub fn save(path: &Path, kind: &str, meta: &impl Serialize, tensors: &ParamSet) -> Result<()> {
    let bytes = encode(kind, meta, tensors)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load<M: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<(M, ParamSet)> {
    let bytes = std::fs::read(path)?;
    decode(kind, &bytes)
}

/// Rewrites the header of an existing checkpoint with a provenance record.
pub fn stamp(path: &Path, run: &impl Serialize) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let (mut header, payload) = split_header(&bytes)?;
    header.run = Some(serde_json::to_value(run)?);
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    std::fs::write(path, out)?;
    Ok(())
}

/// Provenance record written by [`stamp`], if any.
pub fn read_stamp(path: &Path) -> Result<Option<Value>> {
    let bytes = std::fs::read(path)?;
    Ok(split_header(&bytes)?.0.run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_wrong_kind_and_truncation() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let bytes = encode("lda", &serde_json::json!({"k": 2}), &p).unwrap();
        assert!(decode::<Value>("ffn", &bytes).is_err());
        assert!(decode::<Value>("lda", &bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(decode::<Value>("lda", &wrong).is_err());
    }

    #[test]
    fn stamp_keeps_payload_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![1.5, -2.0]));
        save(&path, "lda", &serde_json::json!({"k": 2}), &p).unwrap();
        assert_eq!(read_stamp(&path).unwrap(), None);
        stamp(&path, &serde_json::json!({"config_hash": "ab", "seed": 7})).unwrap();
        assert_eq!(read_stamp(&path).unwrap().unwrap()["seed"], 7);
        let (meta, back): (Value, ParamSet) = load(&path, "lda").unwrap();
        assert_eq!(meta["k"], 2);
        assert_eq!(back.get("w").unwrap().data(), &[1.5, -2.0]);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            vals in proptest::collection::vec(proptest::num::f64::ANY, 1..40),
            rows in 1usize..4,
        ) {
            let n = vals.len() / rows * rows;
            prop_assume!(n > 0);
            let mut p = ParamSet::new();
            p.insert("a", Tensor::matrix(rows, n / rows, vals[..n].to_vec()).unwrap());
            p.insert("b", Tensor::scalar(vals[0]));
            let bytes = encode("x", &serde_json::json!({"seed": 3}), &p).unwrap();
            let (meta, back): (Value, ParamSet) = decode("x", &bytes).unwrap();
            prop_assert_eq!(meta["seed"].as_u64(), Some(3));
            for ((na, ta), (nb, tb)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(ta.shape(), tb.shape());
                for (x, y) in ta.data().iter().zip(tb.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
