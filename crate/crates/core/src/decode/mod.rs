//! Beam search and greedy decoding over any [`StepModel`].
//!
//! Lengths count generated content tokens, EOS excluded. EOS is masked until
//! `min_length` content tokens exist; a hypothesis with `max_length` content
//! tokens is finished without EOS. The length used for scoring counts EOS
//! when present.
//!
//! Each step ranks every unmasked continuation of every live hypothesis by
//! cumulative log-probability (ties: lexicographically lower token sequence).
//! EOS continuations ranked within the top `beam_size` become finished
//! hypotheses; the best non-EOS continuations refill the beam. With
//! `early_stopping`, decoding halts as soon as `beam_size` hypotheses have
//! finished; otherwise it continues until no live hypothesis, scored at its
//! current length, beats the `beam_size`-th best finished one. The result
//! is the finished hypothesis with the highest `logprob / len^p`.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, PAD, SEP, UNK};
use crate::error::{Error, Result};
use crate::model::Prepared;
use crate::numerics::{log_softmax, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    pub max_length: usize,
    pub min_length: usize,
    /// 0 disables the constraint.
    pub no_repeat_ngram: usize,
    pub early_stopping: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            length_penalty: 2.0,
            max_length: 180,
            min_length: 56,
            no_repeat_ngram: 3,
            early_stopping: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| {
            Err(Error::Config {
                field: field.to_string(),
                msg: msg.to_string(),
            })
        };
        if self.beam_size == 0 {
            return bad("beam_size", "must be at least 1");
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return bad("min_length", "must satisfy 0 < min_length <= max_length");
        }
        if !self.length_penalty.is_finite() {
            return bad("length_penalty", "must be finite");
        }
        Ok(())
    }
}

/// Next-token distribution given the content tokens generated so far.
pub trait StepModel {
    fn vocab_size(&self) -> usize;

    fn eos(&self) -> usize {
        EOS
    }

    /// Tokens that may never be emitted.
    fn banned(&self) -> &[usize] {
        &[]
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// Generation from a prepared summarizer. Reserved tokens other than EOS
/// are never emitted.
impl StepModel for Prepared<'_> {
    fn vocab_size(&self) -> usize {
        Prepared::vocab_size(self)
    }

    fn banned(&self) -> &[usize] {
        &[PAD, BOS, UNK, SEP]
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS);
        ids.extend_from_slice(prefix);
        self.next_log_probs(&ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Content tokens (EOS excluded).
    pub tokens: Vec<usize>,
    pub logprob: f64,
    /// Ended with EOS rather than by reaching `max_length`.
    pub ended_with_eos: bool,
    /// EOS was emitted because every continuation was masked.
    pub forced_eos: bool,
}

impl Hypothesis {
    /// Length used for normalisation.
    pub fn scored_length(&self) -> usize {
        self.tokens.len() + usize::from(self.ended_with_eos)
    }

    pub fn score(&self, p: f64) -> f64 {
        length_normalized_score(self.logprob, self.scored_length(), p)
    }
}

/// `logprob / length^p`.
pub fn length_normalized_score(logprob: f64, length: usize, p: f64) -> f64 {
    logprob / (length.max(1) as f64).powf(p)
}

/// Model log-probabilities with the length, n-gram, and ban constraints
/// applied (masked entries are `-inf`).
pub fn constrained_log_probs<M: StepModel + ?Sized>(
    model: &M,
    tokens: &[usize],
    cfg: &DecodeConfig,
) -> Result<(Vec<f64>, f64)> {
    let mut lp = model.log_probs(tokens)?;
    if lp.len() != model.vocab_size() {
        return Err(Error::shape(
            "StepModel::log_probs",
            format!("{} values for vocabulary of {}", lp.len(), model.vocab_size()),
        ));
    }
    if lp.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("decoder log-probabilities"));
    }
    let eos = model.eos();
    let raw_eos = lp[eos];
    for &b in model.banned() {
        if b != eos && b < lp.len() {
            lp[b] = f64::NEG_INFINITY;
        }
    }
    if tokens.len() < cfg.min_length {
        lp[eos] = f64::NEG_INFINITY;
    }
    let n = cfg.no_repeat_ngram;
    if n > 0 && tokens.len() + 1 >= n {
        let head = &tokens[tokens.len() + 1 - n..];
        for w in tokens.windows(n) {
            if &w[..n - 1] == head {
                lp[w[n - 1]] = f64::NEG_INFINITY;
            }
        }
    }
    Ok((lp, raw_eos))
}

#[derive(Debug)]
struct Candidate {
    parent: usize,
    token: usize,
    logprob: f64,
    forced: bool,
}

fn by_tokens(a: &[usize], ta: usize, b: &[usize], tb: usize) -> Ordering {
    a.iter().chain([&ta]).cmp(b.iter().chain([&tb]))
}

/// Best hypothesis by normalised score; ties go to the lower token sequence.
fn best(finished: Vec<Hypothesis>, p: f64) -> Hypothesis {
    finished
        .into_iter()
        .reduce(|a, b| match b.score(p).total_cmp(&a.score(p)) {
            Ordering::Greater => b,
            Ordering::Equal if b.tokens < a.tokens => b,
            _ => a,
        })
        .expect("decoding always finishes at least one hypothesis")
}

pub fn beam_search<M: StepModel + ?Sized>(model: &M, cfg: &DecodeConfig) -> Result<Hypothesis> {
    beam_search_all(model, cfg).map(|f| best(f, cfg.length_penalty))
}

/// Every finished hypothesis, in the order it finished.
pub fn beam_search_all<M: StepModel + ?Sized>(model: &M, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let eos = model.eos();
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished = Vec::new();

    while !live.is_empty() {
        let mut cands = Vec::new();
        for (parent, (tokens, logprob)) in live.iter().enumerate() {
            let (lp, raw_eos) = constrained_log_probs(model, tokens, cfg)?;
            if lp.iter().all(|&v| v == f64::NEG_INFINITY) {
                cands.push(Candidate {
                    parent,
                    token: eos,
                    logprob: logprob + raw_eos,
                    forced: true,
                });
                continue;
            }
            for (token, &v) in lp.iter().enumerate() {
                if v > f64::NEG_INFINITY {
                    cands.push(Candidate {
                        parent,
                        token,
                        logprob: logprob + v,
                        forced: false,
                    });
                }
            }
        }
        cands.sort_by(|a, b| {
            b.logprob
                .total_cmp(&a.logprob)
                .then_with(|| by_tokens(&live[a.parent].0, a.token, &live[b.parent].0, b.token))
        });

        let mut next = Vec::with_capacity(cfg.beam_size);
        let mut slots = 0;
        for (rank, c) in cands.iter().enumerate() {
            let parent = &live[c.parent].0;
            if c.token == eos {
                if c.forced || rank < cfg.beam_size {
                    finished.push(Hypothesis {
                        tokens: parent.clone(),
                        logprob: c.logprob,
                        ended_with_eos: true,
                        forced_eos: c.forced,
                    });
                }
                continue;
            }
            if slots == cfg.beam_size {
                continue;
            }
            slots += 1;
            let mut tokens = parent.clone();
            tokens.push(c.token);
            if tokens.len() >= cfg.max_length {
                finished.push(Hypothesis {
                    tokens,
                    logprob: c.logprob,
                    ended_with_eos: false,
                    forced_eos: false,
                });
            } else {
                next.push((tokens, c.logprob));
            }
        }
        live = next;
        if finished.len() >= cfg.beam_size && (cfg.early_stopping || no_live_improves(&finished, &live, cfg)) {
            break;
        }
    }
    Ok(finished)
}

/// Without early stopping the search ends once no live hypothesis, scored at
/// its current length, beats the `beam_size`-th best finished one.
fn no_live_improves(finished: &[Hypothesis], live: &[(Vec<usize>, f64)], cfg: &DecodeConfig) -> bool {
    let p = cfg.length_penalty;
    let mut scores: Vec<f64> = finished.iter().map(|h| h.score(p)).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let kept = scores[cfg.beam_size - 1];
    live.iter()
        .all(|(tokens, lp)| length_normalized_score(*lp, tokens.len(), p) <= kept)
}

/// Argmax decoding under the same constraints (ties: lowest token id).
pub fn greedy<M: StepModel + ?Sized>(model: &M, cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let eos = model.eos();
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    loop {
        let (lp, raw_eos) = constrained_log_probs(model, &tokens, cfg)?;
        let mut pick: Option<usize> = None;
        for (t, &v) in lp.iter().enumerate() {
            if v > f64::NEG_INFINITY && pick.is_none_or(|p| v > lp[p]) {
                pick = Some(t);
            }
        }
        let Some(t) = pick else {
            return Ok(Hypothesis {
                tokens,
                logprob: logprob + raw_eos,
                ended_with_eos: true,
                forced_eos: true,
            });
        };
        logprob += lp[t];
        if t == eos {
            return Ok(Hypothesis {
                tokens,
                logprob,
                ended_with_eos: true,
                forced_eos: false,
            });
        }
        tokens.push(t);
        if tokens.len() >= cfg.max_length {
            return Ok(Hypothesis {
                tokens,
                logprob,
                ended_with_eos: false,
                forced_eos: false,
            });
        }
    }
}

/// First-order Markov toy model: next-token log-probabilities depend only on
/// the previous token.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel {
    start: Vec<f64>,
    table: Vec<Vec<f64>>,
    eos: usize,
}

impl BigramModel {
    /// `start` and each `table[prev]` are logits; they are normalised here.
    pub fn new(start: &[f64], table: &[Vec<f64>], eos: usize) -> Result<Self> {
        let v = start.len();
        if table.len() != v || table.iter().any(|r| r.len() != v) || eos >= v {
            return Err(Error::shape("BigramModel", format!("expected {v}x{v} table")));
        }
        let norm = |row: &[f64]| -> Result<Vec<f64>> {
            Ok(log_softmax(&Tensor::vector(row.to_vec()))?.into_data())
        };
        Ok(Self {
            start: norm(start)?,
            table: table.iter().map(|r| norm(r)).collect::<Result<_>>()?,
            eos,
        })
    }

    /// Gaussian logits with standard deviation `spread`.
    pub fn random(vocab: usize, eos: usize, spread: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = Tensor::randn(&[vocab], spread, &mut rng).into_data();
        let table: Vec<Vec<f64>> = (0..vocab)
            .map(|_| Tensor::randn(&[vocab], spread, &mut rng).into_data())
            .collect();
        Self::new(&start, &table, eos)
    }
}

impl StepModel for BigramModel {
    fn vocab_size(&self) -> usize {
        self.start.len()
    }

    fn eos(&self) -> usize {
        self.eos
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(match prefix.last() {
            Some(&t) => self.table[t].clone(),
            None => self.start.clone(),
        })
    }
}
