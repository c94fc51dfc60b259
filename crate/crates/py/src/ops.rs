//! Interpreter-free helpers behind the Python bindings.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use topicsum::corpus::tokenize;
use topicsum::guidance::GuidanceVector;
use topicsum::metrics::{rouge_all, RougeTriple};
use topicsum::model::{cross_attention, topical_cross_attention};
use topicsum::numerics::{Graph, Tensor};
use topicsum::{Error, Result};

/// `T::default()` with the keys of `overrides` replaced. Unknown keys are an error.
pub fn merge_config<T: Serialize + DeserializeOwned + Default>(overrides: Option<Value>) -> Result<T> {
    let mut base = serde_json::to_value(T::default())?;
    if let Some(over) = overrides {
        let Value::Object(fields) = over else {
            return Err(Error::InvalidArgument("config must be a mapping".into()));
        };
        let target = base.as_object_mut().expect("configs serialise to objects");
        for (key, value) in fields {
            if !target.contains_key(&key) {
                return Err(Error::Config {
                    field: key,
                    msg: "unknown field".into(),
                });
            }
            target.insert(key, value);
        }
    }
    Ok(serde_json::from_value(base)?)
}

pub type Rows = Vec<Vec<f64>>;

/// Context and weight rows of standard (`guidance = None`) or topical
/// cross-attention.
pub fn attention(q: &Rows, k: &Rows, v: &Rows, guidance: Option<&[f64]>, pad_mask: &[bool]) -> Result<(Rows, Rows)> {
    let mut g = Graph::new();
    let qv = g.constant(Tensor::from_rows(q)?);
    let kv = g.constant(Tensor::from_rows(k)?);
    let vv = g.constant(Tensor::from_rows(v)?);
    let att = match guidance {
        None => cross_attention(&mut g, qv, kv, vv, pad_mask)?,
        Some(scores) => {
            let gv = GuidanceVector {
                scores: scores.to_vec(),
                mask: vec![false; scores.len()],
            };
            topical_cross_attention(&mut g, qv, kv, vv, &gv, pad_mask)?
        }
    };
    Ok((to_rows(g.value(att.context)), to_rows(g.value(att.weights))))
}

fn to_rows(t: &Tensor) -> Rows {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// ROUGE-1/2/L of two whitespace-tokenised texts.
pub fn rouge_text(candidate: &str, reference: &str) -> RougeTriple {
    rouge_all(&tokenize(candidate), &tokenize(reference))
}
