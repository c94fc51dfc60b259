use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact posterior means of θ and φ by enumerating every assignment of the
/// (few) tokens. Labels are canonicalised so the first token sits in topic 0.
fn enumerate_posterior(
    docs: &[Vec<usize>],
    num_words: usize,
    k: usize,
    alpha: f64,
    eta: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let tokens: Vec<(usize, usize)> = docs
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| doc.iter().map(move |&w| (d, w)))
        .collect();
    let n = tokens.len();
    let total = k.pow(n as u32);
    let lens: Vec<usize> = docs.iter().map(Vec::len).collect();
    let mut log_w = Vec::with_capacity(total);
    let mut stats = Vec::with_capacity(total);
    for code in 0..total {
        let mut z: Vec<usize> = (0..n).map(|i| (code / k.pow(i as u32)) % k).collect();
        if z[0] != 0 {
            // canonical relabelling for K = 2
            z.iter_mut().for_each(|t| *t = 1 - *t);
        }
        let mut n_dk = vec![0u32; docs.len() * k];
        let mut n_kw = vec![0u32; k * num_words];
        let mut n_k = vec![0u32; k];
        for (&(d, w), &t) in tokens.iter().zip(&z) {
            n_dk[d * k + t] += 1;
            n_kw[t * num_words + w] += 1;
            n_k[t] += 1;
        }
        log_w.push(log_p_z(&n_dk, &lens, k, alpha) + log_p_words_given_z(&n_kw, &n_k, k, num_words, eta));
        let theta: Vec<Vec<f64>> = (0..docs.len())
            .map(|d| {
                (0..k)
                    .map(|t| (n_dk[d * k + t] as f64 + alpha) / (lens[d] as f64 + k as f64 * alpha))
                    .collect()
            })
            .collect();
        let phi: Vec<f64> = (0..k * num_words)
            .map(|i| (n_kw[i] as f64 + eta) / (n_k[i / num_words] as f64 + num_words as f64 * eta))
            .collect();
        stats.push((theta, phi));
    }
    let lse = log_sum_exp(&log_w);
    let mut theta = vec![vec![0.0; k]; docs.len()];
    let mut phi = vec![0.0; k * num_words];
    for (lw, (t, p)) in log_w.iter().zip(stats) {
        let w = (lw - lse).exp();
        for (acc, row) in theta.iter_mut().zip(t) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += w * v;
            }
        }
        for (a, v) in phi.iter_mut().zip(p) {
            *a += w * v;
        }
    }
    (theta, phi)
}

fn canonical_gibbs(
    docs: &[Vec<usize>],
    num_words: usize,
    alpha: f64,
    eta: f64,
    seed: u64,
    sweeps: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = 2;
    let mut chain = GibbsChain::new(docs.to_vec(), num_words, k, alpha, eta, seed).unwrap();
    let burn = 500;
    let mut theta = vec![vec![0.0; k]; docs.len()];
    let mut phi = vec![0.0; k * num_words];
    for _ in 0..burn {
        chain.sweep();
    }
    for _ in 0..sweeps {
        chain.sweep();
        let swap = chain.assignments()[0][0] != 0;
        let mut t = chain.theta_sample();
        let mut p = chain.phi_sample();
        if swap {
            t.iter_mut().for_each(|r| r.swap(0, 1));
            let (a, b) = p.split_at_mut(num_words);
            a.swap_with_slice(b);
        }
        for (acc, row) in theta.iter_mut().zip(t) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        for (a, v) in phi.iter_mut().zip(p) {
            *a += v;
        }
    }
    theta.iter_mut().flatten().for_each(|v| *v /= sweeps as f64);
    phi.iter_mut().for_each(|v| *v /= sweeps as f64);
    (theta, phi)
}

#[test]
fn gibbs_matches_enumeration_on_overlapping_docs() {
    let docs = vec![vec![0, 1, 2], vec![1, 2, 3], vec![0, 3]];
    let (t_exact, p_exact) = enumerate_posterior(&docs, 4, 2, 1.0, 0.5);
    let (t_gibbs, p_gibbs) = canonical_gibbs(&docs, 4, 1.0, 0.5, 3, 20_000);
    for (a, b) in t_exact.iter().flatten().zip(t_gibbs.iter().flatten()) {
        assert!((a - b).abs() < 0.05, "theta {a} vs {b}");
    }
    for (a, b) in p_exact.iter().zip(&p_gibbs) {
        assert!((a - b).abs() < 0.05, "phi {a} vs {b}");
    }
}

#[test]
fn disjoint_vocabularies_separate() {
    // docs {a, b} and {c, d}
    let docs = vec![vec![0, 1, 0, 1], vec![2, 3, 2, 3]];
    let (_, phi) = enumerate_posterior(&docs, 4, 2, 0.1, 0.01);
    let mass = |row: &[f64], ws: &[usize]| ws.iter().map(|&w| row[w]).sum::<f64>();
    assert!(mass(&phi[..4], &[0, 1]) >= 0.9);
    assert!(mass(&phi[4..], &[2, 3]) >= 0.9);

    let cfg = LdaConfig {
        k: 2,
        alpha: Some(0.1),
        eta: 0.01,
        iterations: 2000,
        burn_in: 200,
        lag: 10,
        seed: 5,
    };
    let model = train_gibbs(&docs, 4, &cfg).unwrap();
    let (r0, r1) = (model.phi_row(0), model.phi_row(1));
    let ab0 = mass(r0, &[0, 1]);
    let (ab, cd) = if ab0 > 0.5 { (r0, r1) } else { (r1, r0) };
    assert!(mass(ab, &[0, 1]) >= 0.9);
    assert!(mass(cd, &[2, 3]) >= 0.9);
}

#[test]
fn single_word_document() {
    let cfg = LdaConfig {
        k: 2,
        iterations: 200,
        burn_in: 50,
        lag: 5,
        ..LdaConfig::default()
    };
    let model = train_gibbs(&[vec![0, 0, 0]], 3, &cfg).unwrap();
    for t in 0..2 {
        let row = model.phi_row(t);
        assert!(row[0] > row[1] && row[0] > row[2]);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn training_is_deterministic() {
    let docs = vec![vec![0, 1, 1, 2], vec![2, 3, 3], vec![0, 1, 4]];
    let cfg = LdaConfig {
        k: 3,
        iterations: 100,
        burn_in: 20,
        lag: 10,
        seed: 42,
        ..LdaConfig::default()
    };
    let a = train_gibbs(&docs, 5, &cfg).unwrap();
    let b = train_gibbs(&docs, 5, &cfg).unwrap();
    assert_eq!(a.phi(), b.phi());
    assert_eq!(a.sample_log_likelihoods(), b.sample_log_likelihoods());
}

#[test]
fn empty_corpus_and_bad_config() {
    let cfg = LdaConfig::default();
    assert!(matches!(train_gibbs(&[], 3, &cfg), Err(Error::EmptyCorpus)));
    assert!(train_gibbs(&[vec![]], 3, &cfg).is_err());
    let bad = LdaConfig {
        iterations: 10,
        burn_in: 10,
        ..cfg
    };
    assert!(train_gibbs(&[vec![0]], 3, &bad).is_err());
}

fn disjoint_model() -> TopicModel {
    // two topics over {a, b} and {c, d}, six tokens each
    let docs = vec![vec![0, 1, 0, 1, 0, 1], vec![2, 3, 2, 3, 2, 3]];
    let cfg = LdaConfig {
        k: 2,
        alpha: Some(0.1),
        eta: 0.01,
        iterations: 500,
        burn_in: 100,
        lag: 10,
        seed: 1,
    };
    train_gibbs(&docs, 5, &cfg).unwrap()
}

/// Exact fold-in posterior mean by enumeration with φ frozen.
fn enumerate_fold_in(model: &TopicModel, doc: &[usize], alpha: f64) -> Vec<f64> {
    let k = model.k();
    let n = doc.len();
    let mut log_w = Vec::new();
    let mut thetas = Vec::new();
    for code in 0..k.pow(n as u32) {
        let z: Vec<usize> = (0..n).map(|i| (code / k.pow(i as u32)) % k).collect();
        let mut n_dk = vec![0u32; k];
        let mut lw = 0.0;
        for (&w, &t) in doc.iter().zip(&z) {
            n_dk[t] += 1;
            lw += model.phi_row(t)[w].ln();
        }
        lw += log_p_z(&n_dk, &[n], k, alpha);
        log_w.push(lw);
        thetas.push(
            (0..k)
                .map(|t| (n_dk[t] as f64 + alpha) / (n as f64 + k as f64 * alpha))
                .collect::<Vec<_>>(),
        );
    }
    let lse = log_sum_exp(&log_w);
    let mut theta = vec![0.0; k];
    for (lw, t) in log_w.iter().zip(thetas) {
        for (a, v) in theta.iter_mut().zip(t) {
            *a += (lw - lse).exp() * v;
        }
    }
    theta
}

#[test]
fn fold_in_matches_enumeration() {
    let model = disjoint_model();
    let ab_topic = if model.phi_row(0)[0] > 0.3 { 0 } else { 1 };
    let cfg = LdaConfig {
        iterations: 4000,
        burn_in: 100,
        lag: 1,
        ..model.config.clone()
    };
    let doc = [0, 1, 0, 1];
    let exact = enumerate_fold_in(&model, &doc, 0.1);
    assert!(exact[ab_topic] >= 0.9);
    let got = fold_in(&model, &doc, &cfg);
    assert!(!got.fallback);
    assert!((got.theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    for (a, b) in exact.iter().zip(&got.theta) {
        assert!((a - b).abs() < 0.02, "{a} vs {b}");
    }

    let mixed = [0, 2, 3];
    let exact = enumerate_fold_in(&model, &mixed, 0.1);
    let got = fold_in(&model, &mixed, &cfg);
    for (a, b) in exact.iter().zip(&got.theta) {
        assert!((a - b).abs() < 0.05, "{a} vs {b}");
    }
}

#[test]
fn fold_in_empty_after_filter_is_uniform() {
    let model = disjoint_model();
    // word 4 never occurs in training
    let got = fold_in(&model, &[4, 4], &model.config);
    assert!(got.fallback);
    assert_eq!(got.theta, vec![0.5, 0.5]);
    let got = fold_in(&model, &[], &model.config);
    assert!(got.fallback);
}

#[test]
fn harmonic_mean_single_token_closed_form() {
    // K = 1, one token, W = 4: P(w) = 1/W exactly for every sample
    let mut chain = GibbsChain::new(vec![vec![2]], 4, 1, 1.0, 0.01, 0).unwrap();
    let mut lls = Vec::new();
    for _ in 0..5 {
        chain.sweep();
        lls.push(chain.log_likelihood());
    }
    let nll = neg_log_likelihood(&lls).unwrap();
    assert!((nll - 4f64.ln()).abs() < 1e-6, "{nll}");
    assert!(neg_log_likelihood(&[]).is_err());
}

#[test]
fn harmonic_mean_is_stable_for_large_magnitudes() {
    let nll = neg_log_likelihood(&[-5000.0, -5001.0, -4999.5]).unwrap();
    assert!(nll.is_finite());
    // bounded by the extreme samples
    assert!((4999.5..=5001.0).contains(&nll));
}

#[test]
fn duplicated_corpus_roughly_doubles_estimate() {
    // three blocks of four words; each document draws from one block
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let docs: Vec<Vec<usize>> = (0..60)
        .map(|d| (0..20).map(|_| (d % 3) * 4 + rng.random_range(0..4)).collect())
        .collect();
    let doubled: Vec<Vec<usize>> = docs.iter().chain(docs.iter()).cloned().collect();
    let cfg = LdaConfig {
        k: 3,
        iterations: 400,
        burn_in: 200,
        lag: 10,
        seed: 8,
        ..LdaConfig::default()
    };
    let single = train_gibbs(&docs, 12, &cfg).unwrap().neg_log_likelihood().unwrap();
    let double = train_gibbs(&doubled, 12, &cfg).unwrap().neg_log_likelihood().unwrap();
    assert!(single.is_finite() && double.is_finite());
    let ratio = double / single;
    assert!((ratio - 2.0).abs() < 0.15, "ratio {ratio}");
}

#[test]
fn select_single_candidate_and_failures() {
    let docs = vec![vec![0, 1, 2], vec![2, 3, 3]];
    let cfg = LdaConfig {
        iterations: 60,
        burn_in: 20,
        lag: 10,
        ..LdaConfig::default()
    };
    let (sel, model) = select_k(&docs, 4, &[3], &cfg).unwrap();
    assert_eq!(sel.best_k, 3);
    assert_eq!(model.k(), 3);

    // K = 1 violates the config contract; recorded and skipped
    let (sel, _) = select_k(&docs, 4, &[1, 2], &cfg).unwrap();
    assert_eq!(sel.best_k, 2);
    assert!(sel.table[0].error.is_some());
    assert!(select_k(&docs, 4, &[1], &cfg).is_err());
    assert!(select_k(&docs, 4, &[], &cfg).is_err());
    assert_eq!(DEFAULT_K_CANDIDATES, [50, 100, 150, 200, 250, 300]);
}

#[test]
fn checkpoint_roundtrip() {
    let model = disjoint_model();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("lda.ckpt");
    model.save(&p, "abc").unwrap();
    let (back, hash) = TopicModel::load(&p).unwrap();
    assert_eq!(hash, "abc");
    assert_eq!(back.phi(), model.phi());
    assert_eq!(back.k(), 2);
    assert!(back.in_vocab(0) && !back.in_vocab(4));
    assert_eq!(back.neg_log_likelihood().unwrap(), model.neg_log_likelihood().unwrap());
}
