//! Synthetic two-topic corpus: every document mixes two topics and yields one
//! summary per topic, each drawn from that topic alone.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use super::stopwords::DEFAULT_STOPWORDS;
use super::RawExample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub k_true: usize,
    pub vocab_per_topic: usize,
    pub doc_len: usize,
    pub summary_len: usize,
    /// Symmetric Beta concentration for the two-topic proportion.
    pub concentration: f64,
    pub n_docs: usize,
    /// Fraction of source tokens drawn from the stopword list.
    pub stopword_rate: f64,
    /// Within-topic word weights are `1 / (rank + 1)^zipf`.
    pub zipf: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k_true: 4,
            vocab_per_topic: 6,
            doc_len: 24,
            summary_len: 6,
            concentration: 20.0,
            n_docs: 200,
            stopword_rate: 0.2,
            zipf: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| {
            Err(Error::Config {
                field: field.into(),
                msg: msg.into(),
            })
        };
        if self.k_true < 2 {
            return bad("k_true", "must be at least 2");
        }
        if self.vocab_per_topic < 2 {
            return bad("vocab_per_topic", "must be at least 2");
        }
        if self.doc_len == 0 || self.summary_len == 0 || self.n_docs == 0 {
            return bad("doc_len/summary_len/n_docs", "must be positive");
        }
        if !(self.concentration > 0.0) {
            return bad("concentration", "must be positive");
        }
        if !(0.0..1.0).contains(&self.stopword_rate) {
            return bad("stopword_rate", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn topic_word(k: usize, j: usize) -> String {
        format!("t{k}w{j}")
    }

    pub fn topic_vocab(&self) -> Vec<Vec<String>> {
        (0..self.k_true)
            .map(|k| (0..self.vocab_per_topic).map(|j| Self::topic_word(k, j)).collect())
            .collect()
    }

    fn word_weights(&self) -> Vec<f64> {
        (0..self.vocab_per_topic)
            .map(|j| 1.0 / ((j + 1) as f64).powf(self.zipf))
            .collect()
    }

    /// Short topic sentence built from a topic's three most probable words.
    pub fn topic_sentence(&self, k: usize) -> String {
        let words: Vec<String> = (0..self.vocab_per_topic.min(3))
            .map(|j| Self::topic_word(k, j))
            .collect();
        format!("summary about {} .", words.join(" "))
    }
}

/// Ground truth recorded alongside a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLabels {
    /// `(first, second)` topic of each document.
    pub doc_topics: Vec<(usize, usize)>,
    /// Share of topic tokens drawn from `first`.
    pub proportions: Vec<f64>,
    pub topic_vocab: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    /// Two examples per document, in document order; `examples[2d + i]`
    /// summarises topic `i` of document `d`.
    pub examples: Vec<RawExample>,
    pub labels: SynthLabels,
}

impl SynthCorpus {
    /// Index of the document an example came from.
    pub fn doc_of(example_index: usize) -> usize {
        example_index / 2
    }
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = cfg.topic_vocab();
    let words = WeightedIndex::new(cfg.word_weights()).expect("positive weights");
    let beta = Beta::new(cfg.concentration, cfg.concentration).expect("validated");

    let mut examples = Vec::with_capacity(cfg.n_docs * 2);
    let mut doc_topics = Vec::with_capacity(cfg.n_docs);
    let mut proportions = Vec::with_capacity(cfg.n_docs);

    for d in 0..cfg.n_docs {
        let a = rng.random_range(0..cfg.k_true);
        let mut b = rng.random_range(0..cfg.k_true - 1);
        if b >= a {
            b += 1;
        }
        let p: f64 = beta.sample(&mut rng);

        let source: Vec<&str> = (0..cfg.doc_len)
            .map(|_| {
                if rng.random::<f64>() < cfg.stopword_rate {
                    *DEFAULT_STOPWORDS.choose(&mut rng).expect("non-empty")
                } else {
                    let k = if rng.random::<f64>() < p { a } else { b };
                    vocab[k][words.sample(&mut rng)].as_str()
                }
            })
            .collect();
        let source = source.join(" ");

        for (slot, k) in [a, b].into_iter().enumerate() {
            let summary: Vec<&str> = (0..cfg.summary_len)
                .map(|_| vocab[k][words.sample(&mut rng)].as_str())
                .collect();
            examples.push(RawExample {
                id: format!("doc{d}-{slot}"),
                source: source.clone(),
                summary: summary.join(" "),
                target_topics: Some(vec![(k, 1.0)]),
                topic_prompt: Some(cfg.topic_sentence(k)),
            });
        }
        doc_topics.push((a, b));
        proportions.push(p);
    }

    Ok(SynthCorpus {
        examples,
        labels: SynthLabels {
            doc_topics,
            proportions,
            topic_vocab: vocab,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn small() -> SynthConfig {
        SynthConfig {
            k_true: 2,
            n_docs: 30,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn summaries_stay_inside_their_topic() {
        let cfg = small();
        let corpus = synth_corpus(&cfg).unwrap();
        let vocab = cfg.topic_vocab();
        for ex in &corpus.examples {
            let k = ex.target_topics.as_ref().unwrap()[0].0;
            for tok in tokenize(&ex.summary) {
                assert!(vocab[k].contains(&tok), "{tok} not in topic {k}");
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = small();
        assert_eq!(synth_corpus(&cfg).unwrap(), synth_corpus(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg };
        assert_ne!(synth_corpus(&other).unwrap(), synth_corpus(&small()).unwrap());
    }

    #[test]
    fn summary_mass_concentrates_on_topic_words() {
        let cfg = SynthConfig {
            k_true: 4,
            n_docs: 100,
            ..SynthConfig::default()
        };
        let corpus = synth_corpus(&cfg).unwrap();
        let vocab = cfg.topic_vocab();
        let mut counts = vec![vec![0usize; cfg.k_true]; cfg.k_true];
        for ex in &corpus.examples {
            let k = ex.target_topics.as_ref().unwrap()[0].0;
            for tok in tokenize(&ex.summary) {
                if let Some(owner) = vocab.iter().position(|v| v.contains(&tok)) {
                    counts[k][owner] += 1;
                }
            }
        }
        for k in 0..cfg.k_true {
            let total: usize = counts[k].iter().sum();
            assert!(counts[k][k] as f64 >= 0.95 * total as f64);
        }
    }

    #[test]
    fn sources_mix_two_distinct_topics() {
        let corpus = synth_corpus(&small()).unwrap();
        for &(a, b) in &corpus.labels.doc_topics {
            assert_ne!(a, b);
        }
        assert_eq!(corpus.examples.len(), 60);
        assert_eq!(corpus.examples[0].source, corpus.examples[1].source);
    }

    #[test]
    fn invalid_configs() {
        let bad = SynthConfig {
            vocab_per_topic: 1,
            ..small()
        };
        assert!(synth_corpus(&bad).is_err());
        let bad = SynthConfig {
            k_true: 1,
            ..small()
        };
        assert!(synth_corpus(&bad).is_err());
    }
}
