//! Topical word vectors, their alignment to source positions, controlled
//! topic mixtures, and the feed-forward reconstructor used at test time.

mod ffn;

pub use ffn::{ffn_forward, train_ffn, FfnConfig, FfnWeights, TrainedFfn};

use serde::{Deserialize, Serialize};

use crate::corpus::{bow, l1_normalize, Example, Stopwords, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::lda::{fold_in, lda_tokens, LdaConfig, TopicMixture, TopicModel};

/// Score given to stopwords, unknown words, and words outside the topic
/// model's vocabulary.
pub const OOV_SCORE: f64 = 1e-9;

/// Distribution over the full vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicWordVector {
    pub tau: Vec<f64>,
}

/// `τ = Σ_i θ_i · φ_i`.
pub fn topic_word_vector(model: &TopicModel, mixture: &TopicMixture) -> Result<TopicWordVector> {
    if mixture.k() != model.k() {
        return Err(Error::shape(
            "topic_word_vector",
            format!("mixture over {} topics, model has {}", mixture.k(), model.k()),
        ));
    }
    let mut tau = vec![0.0; model.num_words()];
    for (t, &weight) in mixture.theta.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        for (acc, &p) in tau.iter_mut().zip(model.phi_row(t)) {
            *acc += weight * p;
        }
    }
    Ok(TopicWordVector { tau })
}

/// Normalised target weights with exact zeros on every other topic.
pub fn controlled_mixture(targets: &[(usize, f64)], k: usize) -> Result<TopicMixture> {
    if let Some(&(t, _)) = targets.iter().find(|(t, _)| *t >= k) {
        return Err(Error::invalid(format!("target topic {t} out of range for K={k}")));
    }
    if targets.iter().any(|&(_, w)| w < 0.0 || !w.is_finite()) {
        return Err(Error::invalid("target topic weights must be non-negative"));
    }
    let total: f64 = targets.iter().map(|&(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("target topic weights are all zero"));
    }
    let mut theta = vec![0.0; k];
    for &(t, w) in targets {
        theta[t] += w;
    }
    theta.iter_mut().for_each(|v| *v /= total);
    Ok(TopicMixture {
        theta,
        fallback: false,
    })
}

/// Per-position topical scores for one encoder input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceVector {
    pub scores: Vec<f64>,
    /// `true` marks a padding position.
    pub mask: Vec<bool>,
}

impl GuidanceVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Constant guidance (every position `OOV_SCORE`), used for prompt slots
    /// and as the neutral element.
    pub fn constant(len: usize) -> Self {
        Self {
            scores: vec![OOV_SCORE; len],
            mask: vec![false; len],
        }
    }

    /// Prepends `n` constant-score positions.
    pub fn with_prefix(mut self, n: usize) -> Self {
        let mut scores = vec![OOV_SCORE; n];
        scores.append(&mut self.scores);
        let mut mask = vec![false; n];
        mask.append(&mut self.mask);
        Self { scores, mask }
    }

    /// Softmax over unmasked positions; masked positions get exactly 0.
    pub fn distribution(&self) -> Result<Vec<f64>> {
        let max = self
            .scores
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| !m)
            .map(|(&s, _)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::AllMasked);
        }
        let mut out: Vec<f64> = self
            .scores
            .iter()
            .zip(&self.mask)
            .map(|(&s, &m)| if m { 0.0 } else { (s - max).exp() })
            .collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
        Ok(out)
    }

    /// Position with the highest score (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, (&s, &m)) in self.scores.iter().zip(&self.mask).enumerate() {
            if !m && (self.mask[best] || s > self.scores[best]) {
                best = i;
            }
        }
        best
    }
}

/// Looks up each source token's score in `tau`. Stopwords, reserved ids, and
/// words the topic model never saw get [`OOV_SCORE`]; padding is masked.
pub fn align_to_source(
    tau: &TopicWordVector,
    source: &[usize],
    vocab: &Vocabulary,
    stopwords: &Stopwords,
    in_topic_vocab: impl Fn(usize) -> bool,
) -> GuidanceVector {
    let mut scores = Vec::with_capacity(source.len());
    let mut mask = Vec::with_capacity(source.len());
    for &id in source {
        if id == PAD {
            scores.push(0.0);
            mask.push(true);
            continue;
        }
        mask.push(false);
        let excluded = Vocabulary::is_reserved(id)
            || id >= tau.tau.len()
            || vocab.token(id).is_none_or(|t| stopwords.contains(t))
            || !in_topic_vocab(id);
        scores.push(if excluded { OOV_SCORE } else { tau.tau[id] });
    }
    GuidanceVector { scores, mask }
}

/// Where the topic mixture behind the guidance comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    /// FFN reconstruction from the source's term frequencies.
    Ffn,
    /// Fold-in of the reference summary (training-time oracle).
    LdaTarget,
    /// User-specified target topics, other topics zeroed.
    Controlled,
}

impl std::str::FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ffn" => Ok(Self::Ffn),
            "lda-target" => Ok(Self::LdaTarget),
            "controlled" => Ok(Self::Controlled),
            other => Err(Error::invalid(format!("unknown guidance mode `{other}`"))),
        }
    }
}

/// Everything needed to produce guidance for an example.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceContext<'a> {
    pub model: &'a TopicModel,
    pub ffn: Option<&'a FfnWeights>,
    pub vocab: &'a Vocabulary,
    pub stopwords: &'a Stopwords,
    pub fold_in: &'a LdaConfig,
}

impl GuidanceContext<'_> {
    /// τ for an example under `mode`.
    pub fn tau(&self, example: &Example, mode: GuidanceMode) -> Result<TopicWordVector> {
        match mode {
            GuidanceMode::LdaTarget => {
                let words = lda_tokens(&example.summary, self.vocab, self.stopwords);
                let mixture = fold_in(self.model, &words, self.fold_in);
                topic_word_vector(self.model, &mixture)
            }
            GuidanceMode::Ffn => {
                let ffn = self
                    .ffn
                    .ok_or_else(|| Error::invalid("ffn guidance requested without FFN weights"))?;
                let freq = l1_normalize(bow(&example.source, self.vocab.len()));
                ffn_forward(&freq, ffn)
            }
            GuidanceMode::Controlled => {
                let targets = example.target_topics.as_ref().ok_or_else(|| {
                    Error::invalid(format!(
                        "controlled guidance needs target_topics (example `{}`)",
                        example.id
                    ))
                })?;
                let mixture = controlled_mixture(targets, self.model.k())?;
                topic_word_vector(self.model, &mixture)
            }
        }
    }

    /// Guidance aligned to the example's source.
    pub fn guidance(&self, example: &Example, mode: GuidanceMode) -> Result<GuidanceVector> {
        let tau = self.tau(example, mode)?;
        Ok(align_to_source(
            &tau,
            &example.source,
            self.vocab,
            self.stopwords,
            |w| self.model.in_vocab(w),
        ))
    }
}

/// Mixture of the reference summary, the FFN's training target.
pub fn target_tau(
    model: &TopicModel,
    summary: &[usize],
    vocab: &Vocabulary,
    stopwords: &Stopwords,
    fold_cfg: &LdaConfig,
) -> Result<TopicWordVector> {
    let words = lda_tokens(summary, vocab, stopwords);
    topic_word_vector(model, &fold_in(model, &words, fold_cfg))
}

#[cfg(test)]
mod tests;
