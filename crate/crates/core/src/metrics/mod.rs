//! Token-level ROUGE and the topic-focus score.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lda::{fold_in, LdaConfig, TopicModel};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Input too short to form a single unit; all components are 0.
    pub degenerate: bool,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand: usize, reference: usize) -> Self {
        if cand == 0 || reference == 0 {
            return Self {
                degenerate: true,
                ..Self::default()
            };
        }
        let precision = overlap as f64 / cand as f64;
        let recall = overlap as f64 / reference as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            degenerate: false,
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(Error::invalid("rouge_n needs n >= 1"));
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    let total = |len: usize| (len + 1).saturating_sub(n);
    Ok(RougeScore::from_counts(
        overlap,
        total(candidate.len()),
        total(reference.len()),
    ))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

pub fn rouge_all<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> RougeTriple {
    RougeTriple {
        rouge1: rouge_n(candidate, reference, 1).expect("n = 1"),
        rouge2: rouge_n(candidate, reference, 2).expect("n = 2"),
        rouge_l: rouge_l(candidate, reference),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicFocusReport {
    /// `theta[target]` of each summary's fold-in.
    pub prevalences: Vec<f64>,
    /// Summaries with no in-vocabulary token (prevalence `1/K`).
    pub fallback: Vec<bool>,
    pub mean: f64,
}

/// Fold-in prevalence of each summary's target topic. `summaries` are
/// already filtered to LDA tokens.
pub fn topic_focus(
    model: &TopicModel,
    summaries: &[Vec<usize>],
    targets: &[usize],
    cfg: &LdaConfig,
) -> Result<TopicFocusReport> {
    if summaries.len() != targets.len() {
        return Err(Error::shape(
            "topic_focus",
            format!("{} summaries, {} targets", summaries.len(), targets.len()),
        ));
    }
    if summaries.is_empty() {
        return Err(Error::invalid("topic_focus needs at least one summary"));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= model.k()) {
        return Err(Error::invalid(format!("target topic {t} out of range for K={}", model.k())));
    }
    let mut prevalences = Vec::with_capacity(summaries.len());
    let mut fallback = Vec::with_capacity(summaries.len());
    for (s, &t) in summaries.iter().zip(targets) {
        let mix = fold_in(model, s, cfg);
        if mix.fallback {
            log::warn!("summary without in-vocabulary tokens scored at 1/K");
        }
        prevalences.push(mix.theta[t]);
        fallback.push(mix.fallback);
    }
    let mean = prevalences.iter().sum::<f64>() / prevalences.len() as f64;
    Ok(TopicFocusReport {
        prevalences,
        fallback,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn hand_examples_are_exact() {
        let (c, r) = (words("the cat sat"), words("the cat ran"));
        let r1 = rouge_n(&c, &r, 1).unwrap();
        assert_eq!((r1.precision, r1.recall, r1.f1), (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0));
        let r2 = rouge_n(&c, &r, 2).unwrap();
        assert_eq!((r2.precision, r2.recall, r2.f1), (0.5, 0.5, 0.5));
        assert_eq!(rouge_l(&c, &r).f1, 2.0 / 3.0);
    }

    #[test]
    fn edge_cases() {
        let a = words("a b c");
        let all = rouge_all(&a, &a);
        assert_eq!((all.rouge1.f1, all.rouge2.f1, all.rouge_l.f1), (1.0, 1.0, 1.0));
        assert_eq!(rouge_l(&a, &words("x y")).f1, 0.0);
        let pre = rouge_l(&words("a b c d"), &words("a b"));
        assert_eq!((pre.recall, pre.precision), (1.0, 0.5));
        let short = rouge_n(&words("a"), &words("a b"), 2).unwrap();
        assert!(short.degenerate && short.f1 == 0.0);
        assert!(rouge_l::<&str>(&[], &a).degenerate);
        assert!(rouge_n(&a, &a, 0).is_err());
    }

    fn brute_rouge_n(c: &[u8], r: &[u8], n: usize) -> (usize, usize, usize) {
        let cg: Vec<&[u8]> = c.windows(n).collect();
        let mut rg: Vec<Option<&[u8]>> = r.windows(n).map(Some).collect();
        let mut overlap = 0;
        for g in &cg {
            if let Some(slot) = rg.iter_mut().find(|s| s.is_some_and(|x| x == *g)) {
                *slot = None;
                overlap += 1;
            }
        }
        (overlap, cg.len(), r.windows(n).count())
    }

    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        // every subsequence of the shorter input, longest first
        let (s, l) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let is_sub = |sub: &[u8]| {
            let mut it = l.iter();
            sub.iter().all(|x| it.any(|y| y == x))
        };
        (0u32..1 << s.len())
            .filter_map(|mask| {
                let sub: Vec<u8> = (0..s.len()).filter(|i| mask >> i & 1 == 1).map(|i| s[i]).collect();
                is_sub(&sub).then_some(sub.len())
            })
            .max()
            .unwrap_or(0)
    }

    proptest! {
        #[test]
        fn rouge_n_matches_brute_force(
            c in proptest::collection::vec(0u8..5, 0..12),
            r in proptest::collection::vec(0u8..5, 0..12),
            n in 1usize..4,
        ) {
            let (o, nc, nr) = brute_rouge_n(&c, &r, n);
            let got = rouge_n(&c, &r, n).unwrap();
            let want = RougeScore::from_counts(o, nc, nr);
            prop_assert_eq!(got, want);
            prop_assert!(got.f1 <= got.precision.max(got.recall) + 1e-15);
            prop_assert!(got.f1 >= got.precision.min(got.recall) - 1e-15 || got.f1 == 0.0 || got.degenerate);
            prop_assert!((0.0..=1.0).contains(&got.f1));
        }

        #[test]
        fn lcs_matches_brute_force(
            c in proptest::collection::vec(0u8..4, 0..10),
            r in proptest::collection::vec(0u8..4, 0..10),
        ) {
            prop_assert_eq!(lcs_len(&c, &r), brute_lcs(&c, &r));
        }
    }

    #[test]
    fn topic_focus_on_disjoint_model() {
        let phi = vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5];
        let model = TopicModel::from_phi(2, 4, phi, LdaConfig::default()).unwrap();
        let cfg = LdaConfig {
            k: 2,
            alpha: Some(0.1),
            ..LdaConfig::default()
        };
        let rep = topic_focus(&model, &[vec![0, 1, 0], vec![], vec![2, 3]], &[0, 1, 0], &cfg).unwrap();
        assert!(rep.prevalences[0] >= 0.9);
        assert_eq!(rep.prevalences[1], 0.5);
        assert_eq!(rep.fallback, vec![false, true, false]);
        assert!(rep.prevalences[2] < 0.1);
        let lo = rep.prevalences.iter().cloned().fold(1.0, f64::min);
        let hi = rep.prevalences.iter().cloned().fold(0.0, f64::max);
        assert!(rep.mean >= lo && rep.mean <= hi);
        assert!(topic_focus(&model, &[vec![0]], &[2], &cfg).is_err());
    }
}
