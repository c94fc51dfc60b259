use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TopicWordVector;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{softmax, AdamState, Graph, ParamSet, Targets, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FfnConfig {
    /// Hidden width; 0 means a single affine `|V| → |V|` map.
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FfnConfig {
    fn default() -> Self {
        Self {
            hidden: 0,
            epochs: 15,
            lr: 0.05,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights {
    pub vocab_size: usize,
    pub hidden: usize,
    pub params: ParamSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FfnMeta {
    vocab_size: usize,
    hidden: usize,
    vocab_hash: String,
    config: FfnConfig,
}

impl FfnWeights {
    /// Single-layer weights start at zero (uniform output); the hidden
    /// variant uses a small Gaussian for the first layer.
    pub fn init(vocab_size: usize, hidden: usize, seed: u64) -> Self {
        let mut params = ParamSet::new();
        if hidden == 0 {
            params.insert("w", Tensor::zeros(&[vocab_size, vocab_size]));
            params.insert("b", Tensor::zeros(&[vocab_size]));
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let std = (1.0 / vocab_size as f64).sqrt();
            params.insert("w1", Tensor::randn(&[vocab_size, hidden], std, &mut rng));
            params.insert("b1", Tensor::zeros(&[hidden]));
            params.insert("w2", Tensor::zeros(&[hidden, vocab_size]));
            params.insert("b2", Tensor::zeros(&[vocab_size]));
        }
        Self {
            vocab_size,
            hidden,
            params,
        }
    }

    /// Logits for a batch of frequency rows.
    fn logits(&self, g: &mut Graph, vars: &[crate::numerics::Var], x: crate::numerics::Var) -> Result<crate::numerics::Var> {
        if self.hidden == 0 {
            let h = g.matmul(x, vars[0])?;
            g.add_row(h, vars[1])
        } else {
            let h = g.matmul(x, vars[0])?;
            let h = g.add_row(h, vars[1])?;
            let h = g.gelu(h);
            let o = g.matmul(h, vars[2])?;
            g.add_row(o, vars[3])
        }
    }

    pub fn save(&self, path: &Path, vocab_hash: &str, config: &FfnConfig) -> Result<()> {
        let meta = FfnMeta {
            vocab_size: self.vocab_size,
            hidden: self.hidden,
            vocab_hash: vocab_hash.to_string(),
            config: config.clone(),
        };
        checkpoint::save(path, "ffn", &meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (meta, params): (FfnMeta, ParamSet) = checkpoint::load(path, "ffn")?;
        let expected = Self::init(meta.vocab_size, meta.hidden, 0);
        for (name, t) in expected.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(Error::Checkpoint(format!("bad or missing tensor `{name}`"))),
            }
        }
        Ok((
            Self {
                vocab_size: meta.vocab_size,
                hidden: meta.hidden,
                params,
            },
            meta.vocab_hash,
        ))
    }
}

/// Softmax output over the vocabulary for one frequency vector.
pub fn ffn_forward(freq: &[f64], weights: &FfnWeights) -> Result<TopicWordVector> {
    if freq.len() != weights.vocab_size {
        return Err(Error::shape(
            "ffn_forward",
            format!("{} inputs for vocabulary of {}", freq.len(), weights.vocab_size),
        ));
    }
    if freq.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("frequencies must be non-negative"));
    }
    let mut g = Graph::new();
    let vars: Vec<_> = weights.params.tensors().map(|t| g.constant(t.clone())).collect();
    let x = g.constant(Tensor::matrix(1, freq.len(), freq.to_vec())?);
    let logits = weights.logits(&mut g, &vars, x)?;
    let probs = softmax(g.value(logits))?;
    Ok(TopicWordVector {
        tau: probs.into_data(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainedFfn {
    pub weights: FfnWeights,
    /// Mean cross-entropy over the full training set after each epoch.
    pub epoch_losses: Vec<f64>,
}

fn batch_loss(
    weights: &FfnWeights,
    pairs: &[(Vec<f64>, Vec<f64>)],
    idx: &[usize],
    g: &mut Graph,
    vars: &[crate::numerics::Var],
) -> Result<crate::numerics::Var> {
    let v = weights.vocab_size;
    let mut xs = Vec::with_capacity(idx.len() * v);
    let mut ts = Vec::with_capacity(idx.len() * v);
    for &i in idx {
        xs.extend_from_slice(&pairs[i].0);
        ts.extend_from_slice(&pairs[i].1);
    }
    let x = g.constant(Tensor::matrix(idx.len(), v, xs)?);
    let logits = weights.logits(g, vars, x)?;
    g.cross_entropy(logits, Targets::Dist(Tensor::matrix(idx.len(), v, ts)?))
}

fn full_loss(weights: &FfnWeights, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<_> = weights.params.tensors().map(|t| g.constant(t.clone())).collect();
    let idx: Vec<usize> = (0..pairs.len()).collect();
    let loss = batch_loss(weights, pairs, &idx, &mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Minimises mean `-Σ_j τ_j log τ̂_j` with Adam over `(frequency, τ)` pairs.
pub fn train_ffn(pairs: &[(Vec<f64>, Vec<f64>)], cfg: &FfnConfig) -> Result<TrainedFfn> {
    let Some(first) = pairs.first() else {
        return Err(Error::invalid("no FFN training pairs"));
    };
    let v = first.0.len();
    for (i, (x, t)) in pairs.iter().enumerate() {
        if x.len() != v || t.len() != v {
            return Err(Error::shape("train_ffn", format!("pair {i} has the wrong width")));
        }
        let s: f64 = t.iter().sum();
        if t.iter().any(|&p| p < 0.0) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("target {i} is not a distribution")));
        }
    }
    let mut weights = FfnWeights::init(v, cfg.hidden, cfg.seed);
    let mut adam = AdamState::new(&weights.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Graph::new();
            let vars: Vec<_> = weights.params.tensors().map(|t| g.param(t.clone())).collect();
            let loss = batch_loss(&weights, pairs, chunk, &mut g, &vars)?;
            g.backward(loss)?;
            let grads: Vec<_> = vars.iter().map(|&p| g.take_grad(p)).collect();
            adam.step(&mut weights.params, &grads)?;
        }
        let loss = full_loss(&weights, pairs)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("FFN loss {loss} at epoch {epoch}")));
        }
        log::debug!("ffn epoch {epoch}: loss {loss:.6}");
        epoch_losses.push(loss);
    }
    Ok(TrainedFfn {
        weights,
        epoch_losses,
    })
}
