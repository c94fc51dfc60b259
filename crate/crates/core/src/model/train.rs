use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward_teacher_forced, Batch, ModelConfig, ModelWeights};
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::guidance::GuidanceVector;
use crate::numerics::{AdamState, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Prepend `topic_prompt SEP` to the encoder input when present.
    pub use_prompt: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
            use_prompt: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Target-weighted mean loss over the epoch's batches.
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedSummarizer {
    pub weights: ModelWeights,
    pub epochs: Vec<EpochMetrics>,
}

/// Adam over the teacher-forced loss. `guidance[i]` belongs to
/// `examples[i]` (required when the model uses topical attention). When
/// `checkpoint_dir` is set, `epoch-{n}.ckpt` is written after every epoch.
pub fn train_summarizer(
    examples: &[Example],
    guidance: &[Option<GuidanceVector>],
    model: &ModelConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    vocab_hash: &str,
) -> Result<TrainedSummarizer> {
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if guidance.len() != examples.len() {
        return Err(Error::shape(
            "train_summarizer",
            format!("{} examples, {} guidance vectors", examples.len(), guidance.len()),
        ));
    }
    let mut weights = ModelWeights::init(model, cfg.seed)?;
    let mut adam = AdamState::new(&weights.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let exs: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let gv: Vec<Option<GuidanceVector>> = chunk.iter().map(|&i| guidance[i].clone()).collect();
            let batch = Batch::from_examples(&exs, &gv, cfg.use_prompt)?;
            let mut g = Graph::new();
            let vars = weights.bind(&mut g, true);
            let out = forward_teacher_forced(&mut g, &weights, &vars, &batch)?;
            let loss = g.value(out.loss).item();
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {loss} at epoch {epoch}, batch starting with `{}`",
                    batch.ids[0]
                )));
            }
            g.backward(out.loss)?;
            let grads: Vec<_> = vars.iter().map(|&v| g.take_grad(v)).collect();
            adam.step(&mut weights.params, &grads)?;
            if let Some((name, _)) = weights.params.iter().find(|(_, t)| !t.is_finite()) {
                return Err(Error::Diverged(format!(
                    "parameter `{name}` became non-finite at epoch {epoch}"
                )));
            }
            let n = batch.num_targets();
            sum += loss * n as f64;
            count += n;
        }
        let train_loss = sum / count as f64;
        log::info!("epoch {epoch}: train loss {train_loss:.4}");
        history.push(EpochMetrics { epoch, train_loss });
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            weights.save(&dir.join(format!("epoch-{epoch}.ckpt")), vocab_hash, cfg.seed, epoch)?;
        }
    }
    Ok(TrainedSummarizer {
        weights,
        epochs: history,
    })
}
