//! Latent Dirichlet allocation by collapsed Gibbs sampling, fold-in
//! inference, the harmonic-mean evidence estimate, and topic-count selection.

mod gibbs;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gibbs::{log_p_words_given_z, log_p_z, GibbsChain};

use crate::checkpoint;
use crate::corpus::{Stopwords, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    /// Number of topics.
    pub k: usize,
    /// Document-topic prior; `None` means `50 / k`.
    pub alpha: Option<f64>,
    /// Topic-word prior.
    pub eta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    /// Sweeps between retained samples after burn-in.
    pub lag: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            k: 10,
            alpha: None,
            eta: 0.01,
            iterations: 1000,
            burn_in: 500,
            lag: 50,
            seed: 0,
        }
    }
}

impl LdaConfig {
    pub fn alpha_value(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| {
            Err(Error::Config {
                field: format!("lda.{field}"),
                msg: msg.into(),
            })
        };
        if self.k < 2 {
            return bad("k", "must be at least 2");
        }
        if !(self.alpha_value() > 0.0) {
            return bad("alpha", "must be positive");
        }
        if !(self.eta > 0.0) {
            return bad("eta", "must be positive");
        }
        if self.iterations <= self.burn_in {
            return bad("iterations", "must exceed burn_in");
        }
        if self.lag == 0 {
            return bad("lag", "must be at least 1");
        }
        Ok(())
    }

    /// Sweep indices (1-based) at which a sample is retained.
    fn is_sample_sweep(&self, sweep: usize) -> bool {
        sweep > self.burn_in && (sweep - self.burn_in) % self.lag == 0
    }
}

/// Document-topic distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMixture {
    pub theta: Vec<f64>,
    /// Set when the document had no usable tokens and the prior was returned.
    #[serde(default)]
    pub fallback: bool,
}

impl TopicMixture {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        let s: f64 = theta.iter().sum();
        if theta.is_empty() || theta.iter().any(|&v| v < 0.0 || !v.is_finite()) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("not a distribution (sum {s})")));
        }
        Ok(Self {
            theta,
            fallback: false,
        })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            theta: vec![1.0 / k as f64; k],
            fallback: true,
        }
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.theta)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LdaMeta {
    k: usize,
    alpha: f64,
    eta: f64,
    num_words: usize,
    vocab_hash: String,
    seed: u64,
    config: LdaConfig,
    log_likelihoods: Vec<f64>,
}

/// Trained topic model. `phi` is `K × W`, the posterior mean of
/// `P(word | topic)` over retained samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub config: LdaConfig,
    k: usize,
    num_words: usize,
    phi: Vec<f64>,
    seen: Vec<bool>,
    n_kw: Vec<u32>,
    n_k: Vec<u32>,
    doc_theta: Vec<Vec<f64>>,
    log_likelihoods: Vec<f64>,
}

impl TopicModel {
    /// Model from explicit topic-word rows (`K × W`, row-major). Every word
    /// counts as seen.
    pub fn from_phi(k: usize, num_words: usize, phi: Vec<f64>, config: LdaConfig) -> Result<Self> {
        if phi.len() != k * num_words || k == 0 {
            return Err(Error::shape("TopicModel::from_phi", format!("{} values for {k}x{num_words}", phi.len())));
        }
        for t in 0..k {
            let row = &phi[t * num_words..(t + 1) * num_words];
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| v < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("phi row {t} is not a distribution")));
            }
        }
        Ok(Self {
            config: LdaConfig { k, ..config },
            k,
            num_words,
            phi,
            seen: vec![true; num_words],
            n_kw: Vec::new(),
            n_k: Vec::new(),
            doc_theta: Vec::new(),
            log_likelihoods: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha_value()
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn phi_row(&self, topic: usize) -> &[f64] {
        &self.phi[topic * self.num_words..(topic + 1) * self.num_words]
    }

    /// Whether the word occurred in the training corpus.
    pub fn in_vocab(&self, word: usize) -> bool {
        self.seen.get(word).copied().unwrap_or(false)
    }

    /// Final-sample counts, kept for diagnostics.
    pub fn topic_word_counts(&self) -> (&[u32], &[u32]) {
        (&self.n_kw, &self.n_k)
    }

    /// Posterior-mean mixtures of the training documents.
    pub fn doc_theta(&self) -> &[Vec<f64>] {
        &self.doc_theta
    }

    /// `log P(w | z)` of each retained sample.
    pub fn sample_log_likelihoods(&self) -> &[f64] {
        &self.log_likelihoods
    }

    /// Harmonic-mean estimate of `-log P(w | K)` from the retained samples.
    pub fn neg_log_likelihood(&self) -> Result<f64> {
        neg_log_likelihood(&self.log_likelihoods)
    }

    /// Words sorted by descending probability under `topic`.
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<usize> {
        let row = self.phi_row(topic);
        let mut ids: Vec<usize> = (0..self.num_words).filter(|&w| self.seen[w]).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        ids.truncate(n);
        ids
    }

    pub fn save(&self, path: &Path, vocab_hash: &str) -> Result<()> {
        let meta = LdaMeta {
            k: self.k,
            alpha: self.alpha(),
            eta: self.config.eta,
            num_words: self.num_words,
            vocab_hash: vocab_hash.to_string(),
            seed: self.config.seed,
            config: self.config.clone(),
            log_likelihoods: self.log_likelihoods.clone(),
        };
        let mut p = ParamSet::new();
        p.insert("phi", Tensor::matrix(self.k, self.num_words, self.phi.clone())?);
        p.insert(
            "seen",
            Tensor::vector(self.seen.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()),
        );
        checkpoint::save(path, "lda", &meta, &p)
    }

    /// Returns the model and the vocabulary hash it was trained against.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (meta, p): (LdaMeta, ParamSet) = checkpoint::load(path, "lda")?;
        let phi = p
            .get("phi")
            .ok_or_else(|| Error::Checkpoint("missing `phi`".into()))?;
        let seen = p
            .get("seen")
            .ok_or_else(|| Error::Checkpoint("missing `seen`".into()))?;
        if phi.shape() != [meta.k, meta.num_words] || seen.numel() != meta.num_words {
            return Err(Error::Checkpoint("tensor shapes disagree with header".into()));
        }
        let model = Self {
            config: meta.config,
            k: meta.k,
            num_words: meta.num_words,
            phi: phi.data().to_vec(),
            seen: seen.data().iter().map(|&v| v > 0.5).collect(),
            n_kw: Vec::new(),
            n_k: Vec::new(),
            doc_theta: Vec::new(),
            log_likelihoods: meta.log_likelihoods,
        };
        Ok((model, meta.vocab_hash))
    }
}

/// Token ids usable by LDA: reserved ids and stopwords removed.
pub fn lda_tokens(ids: &[usize], vocab: &Vocabulary, stopwords: &Stopwords) -> Vec<usize> {
    ids.iter()
        .copied()
        .filter(|&i| {
            !Vocabulary::is_reserved(i) && vocab.token(i).is_some_and(|t| !stopwords.contains(t))
        })
        .collect()
}

/// Collapsed Gibbs training; `phi` and training-document mixtures are
/// posterior means over the retained samples.
pub fn train_gibbs(docs: &[Vec<usize>], num_words: usize, cfg: &LdaConfig) -> Result<TopicModel> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(i) = docs.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("LDA document {i} is empty")));
    }
    let k = cfg.k;
    let mut chain = GibbsChain::new(
        docs.to_vec(),
        num_words,
        k,
        cfg.alpha_value(),
        cfg.eta,
        cfg.seed,
    )?;
    let mut phi = vec![0.0; k * num_words];
    let mut doc_theta = vec![vec![0.0; k]; docs.len()];
    let mut log_likelihoods = Vec::new();
    for sweep in 1..=cfg.iterations {
        chain.sweep();
        if cfg.is_sample_sweep(sweep) {
            for (acc, v) in phi.iter_mut().zip(chain.phi_sample()) {
                *acc += v;
            }
            for (acc, row) in doc_theta.iter_mut().zip(chain.theta_sample()) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            log_likelihoods.push(chain.log_likelihood());
        }
    }
    let s = log_likelihoods.len() as f64;
    phi.iter_mut().for_each(|v| *v /= s);
    doc_theta.iter_mut().flatten().for_each(|v| *v /= s);

    let mut seen = vec![false; num_words];
    for &w in docs.iter().flatten() {
        seen[w] = true;
    }
    Ok(TopicModel {
        config: LdaConfig {
            alpha: Some(cfg.alpha_value()),
            ..cfg.clone()
        },
        k,
        num_words,
        phi,
        seen,
        n_kw: chain.topic_word_counts().to_vec(),
        n_k: chain.topic_counts().to_vec(),
        doc_theta,
        log_likelihoods,
    })
}

/// Infers a held-out document's mixture with `phi` frozen. Tokens unseen in
/// training are dropped; a document left empty gets the uniform prior with
/// `fallback` set.
pub fn fold_in(model: &TopicModel, doc: &[usize], cfg: &LdaConfig) -> TopicMixture {
    let k = model.k;
    let words: Vec<usize> = doc.iter().copied().filter(|&w| model.in_vocab(w)).collect();
    if words.is_empty() {
        return TopicMixture::uniform(k);
    }
    let alpha = cfg.alpha.unwrap_or_else(|| model.alpha());
    let lag = cfg.lag.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut n_dk = vec![0u32; k];
    let mut z: Vec<usize> = words
        .iter()
        .map(|_| {
            let t = rng.random_range(0..k);
            n_dk[t] += 1;
            t
        })
        .collect();
    let mut weights = vec![0.0; k];
    let mut theta = vec![0.0; k];
    let mut samples = 0usize;
    let denom = words.len() as f64 + k as f64 * alpha;
    let iterations = cfg.iterations.max(cfg.burn_in + 1);
    for sweep in 1..=iterations {
        for (i, &w) in words.iter().enumerate() {
            n_dk[z[i]] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                total += (n_dk[t] as f64 + alpha) * model.phi[t * model.num_words + w];
                weights[t] = total;
            }
            let u = rng.random::<f64>() * total;
            let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);
            z[i] = new;
            n_dk[new] += 1;
        }
        if sweep > cfg.burn_in && (sweep - cfg.burn_in) % lag == 0 {
            for t in 0..k {
                theta[t] += (n_dk[t] as f64 + alpha) / denom;
            }
            samples += 1;
        }
    }
    theta.iter_mut().for_each(|v| *v /= samples as f64);
    TopicMixture {
        theta,
        fallback: false,
    }
}

/// `-log` of the harmonic mean of per-sample likelihoods, in log space:
/// `LSE(-ll_s) - ln S`.
pub fn neg_log_likelihood(sample_log_likelihoods: &[f64]) -> Result<f64> {
    if sample_log_likelihoods.is_empty() {
        return Err(Error::invalid("no post-burn-in samples retained"));
    }
    let neg: Vec<f64> = sample_log_likelihoods.iter().map(|v| -v).collect();
    Ok(log_sum_exp(&neg) - (neg.len() as f64).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub neg_log_likelihood: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    pub table: Vec<KScore>,
}

/// Candidate topic counts swept by default.
pub const DEFAULT_K_CANDIDATES: [usize; 6] = [50, 100, 150, 200, 250, 300];

/// Trains one model per candidate and keeps the minimiser of the estimated
/// `-log P(w | K)`. A failing candidate is recorded and skipped.
pub fn select_k(
    docs: &[Vec<usize>],
    num_words: usize,
    candidates: &[usize],
    cfg: &LdaConfig,
) -> Result<(KSelection, TopicModel)> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate topic counts"));
    }
    let mut table = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, TopicModel)> = None;
    for &k in candidates {
        let run = LdaConfig { k, ..cfg.clone() };
        let result = train_gibbs(docs, num_words, &run)
            .and_then(|m| m.neg_log_likelihood().map(|nll| (nll, m)));
        match result {
            Ok((nll, model)) => {
                log::info!("K={k}: -log P(w|K) ≈ {nll:.3}");
                table.push(KScore {
                    k,
                    neg_log_likelihood: Some(nll),
                    error: None,
                });
                if best.as_ref().is_none_or(|(b, _)| nll < *b) {
                    best = Some((nll, model));
                }
            }
            Err(e) => {
                log::warn!("K={k} failed: {e}");
                table.push(KScore {
                    k,
                    neg_log_likelihood: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    match best {
        Some((_, model)) => Ok((
            KSelection {
                best_k: model.k,
                table,
            },
            model,
        )),
        None => Err(Error::invalid(format!(
            "every candidate failed: {}",
            table
                .iter()
                .map(|s| format!("K={}: {}", s.k, s.error.as_deref().unwrap_or("")))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}

#[cfg(test)]
mod tests;
