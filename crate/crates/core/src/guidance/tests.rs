use proptest::prelude::*;

use super::*;
use crate::corpus::{encode_training, synth_corpus, SynthConfig, UNK};
use crate::lda::train_gibbs;

fn two_topic_model() -> TopicModel {
    TopicModel::from_phi(
        2,
        4,
        vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
        LdaConfig::default(),
    )
    .unwrap()
}

#[test]
fn hand_weighted_sum() {
    let m = two_topic_model();
    let tau = topic_word_vector(&m, &TopicMixture::new(vec![0.3, 0.7]).unwrap()).unwrap();
    let want = [0.15, 0.15, 0.35, 0.35];
    for (a, b) in tau.tau.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn one_hot_and_uniform_mixtures() {
    let m = two_topic_model();
    let one = topic_word_vector(&m, &TopicMixture::new(vec![0.0, 1.0]).unwrap()).unwrap();
    assert_eq!(one.tau, m.phi_row(1));
    let uni = topic_word_vector(&m, &TopicMixture::uniform(2)).unwrap();
    assert_eq!(uni.tau, vec![0.25; 4]);
    assert!(topic_word_vector(&m, &TopicMixture::uniform(3)).is_err());
}

#[test]
fn controlled_mixture_cases() {
    assert_eq!(controlled_mixture(&[(2, 1.0)], 4).unwrap().theta, vec![0.0, 0.0, 1.0, 0.0]);
    assert_eq!(
        controlled_mixture(&[(0, 1.0), (1, 1.0)], 3).unwrap().theta,
        vec![0.5, 0.5, 0.0]
    );
    assert!(controlled_mixture(&[(1, 0.0)], 3).is_err());
    assert!(controlled_mixture(&[(3, 1.0)], 3).is_err());
    assert!(controlled_mixture(&[(0, -1.0), (1, 2.0)], 3).is_err());
}

fn fire_vocab() -> (Vocabulary, TopicWordVector) {
    let vocab = Vocabulary::from_tokens(&["fire", "the", "blaze"]);
    let mut tau = vec![0.0; vocab.len()];
    tau[vocab.id("fire").unwrap()] = 0.2;
    tau[vocab.id("blaze").unwrap()] = 0.1;
    tau[vocab.id("the").unwrap()] = 0.7;
    (vocab, TopicWordVector { tau })
}

#[test]
fn align_hand_example() {
    let (vocab, tau) = fire_vocab();
    let src = vocab.encode(&["fire", "the", "blaze"]);
    let g = align_to_source(&tau, &src, &vocab, &Stopwords::default(), |_| true);
    assert_eq!(g.scores, vec![0.2, 1e-9, 0.1]);
    assert_eq!(g.mask, vec![false; 3]);
}

#[test]
fn align_repeats_unknowns_and_padding() {
    let (vocab, tau) = fire_vocab();
    let mut src = vocab.encode(&["fire", "blaze", "fire"]);
    src.push(UNK);
    src.push(PAD);
    let blaze = vocab.id("blaze").unwrap();
    let g = align_to_source(&tau, &src, &vocab, &Stopwords::default(), |w| w != blaze);
    assert_eq!(g.scores[0], g.scores[2]);
    assert_eq!(g.scores[1], OOV_SCORE);
    assert_eq!(g.scores[3], OOV_SCORE);
    assert!(g.mask[4]);
    let d = g.distribution().unwrap();
    assert_eq!(d[4], 0.0);
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn all_stopword_source_is_constant() {
    let (vocab, tau) = fire_vocab();
    let src = vocab.encode(&["the", "the", "the"]);
    let g = align_to_source(&tau, &src, &vocab, &Stopwords::default(), |_| true);
    assert_eq!(g.scores, vec![OOV_SCORE; 3]);
    for p in g.distribution().unwrap() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn fully_masked_guidance_errors() {
    let g = GuidanceVector {
        scores: vec![0.0; 2],
        mask: vec![true; 2],
    };
    assert!(matches!(g.distribution(), Err(Error::AllMasked)));
}

#[test]
fn prefix_and_mode_parsing() {
    let g = GuidanceVector::constant(2).with_prefix(3);
    assert_eq!(g.len(), 5);
    assert_eq!("lda-target".parse::<GuidanceMode>().unwrap(), GuidanceMode::LdaTarget);
    assert!("other".parse::<GuidanceMode>().is_err());
}

fn random_model(k: usize, w: usize, raw: &[f64]) -> TopicModel {
    let mut phi = Vec::with_capacity(k * w);
    for t in 0..k {
        let row = &raw[t * w..(t + 1) * w];
        let s: f64 = row.iter().sum();
        phi.extend(row.iter().map(|v| v / s));
    }
    TopicModel::from_phi(k, w, phi, LdaConfig::default()).unwrap()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

proptest! {
    #[test]
    fn linear_in_the_mixture(
        raw in proptest::collection::vec(0.01f64..1.0, 3 * 5),
        t1 in proptest::collection::vec(0.01f64..1.0, 3),
        t2 in proptest::collection::vec(0.01f64..1.0, 3),
        a in 0.0f64..=1.0,
    ) {
        let m = random_model(3, 5, &raw);
        let (t1, t2) = (normalized(&t1), normalized(&t2));
        let mix: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
        let tau = topic_word_vector(&m, &TopicMixture { theta: mix, fallback: false }).unwrap();
        let tau1 = topic_word_vector(&m, &TopicMixture { theta: t1, fallback: false }).unwrap();
        let tau2 = topic_word_vector(&m, &TopicMixture { theta: t2, fallback: false }).unwrap();
        for j in 0..5 {
            prop_assert!((tau.tau[j] - (a * tau1.tau[j] + (1.0 - a) * tau2.tau[j])).abs() < 1e-12);
        }
        prop_assert!((tau.tau.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(tau.tau.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn align_commutes_with_permutation(
        ids in proptest::collection::vec(0usize..12, 1..20),
        seed in any::<u64>(),
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        let words: Vec<String> = (0..7).map(|i| format!("w{i}")).chain(["the".into()]).collect();
        let vocab = Vocabulary::from_tokens(&words);
        let tau = TopicWordVector { tau: normalized(&(1..=vocab.len()).map(|i| i as f64).collect::<Vec<_>>()) };
        let ids: Vec<usize> = ids.into_iter().map(|i| i % vocab.len()).collect();
        let mut perm: Vec<usize> = (0..ids.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<usize> = perm.iter().map(|&p| ids[p]).collect();
        let sw = Stopwords::default();
        let g = align_to_source(&tau, &ids, &vocab, &sw, |w| w % 5 != 0);
        let gp = align_to_source(&tau, &permuted, &vocab, &sw, |w| w % 5 != 0);
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(gp.scores[i], g.scores[p]);
            prop_assert_eq!(gp.mask[i], g.mask[p]);
        }
        prop_assert!(g.scores.iter().zip(&g.mask).all(|(&s, &m)| m || s > 0.0));
    }

    #[test]
    fn controlled_zeros_are_exact(
        k in 2usize..10,
        picks in proptest::collection::vec((0usize..10, 0.0f64..5.0), 1..4),
    ) {
        let targets: Vec<(usize, f64)> = picks.iter().map(|&(t, w)| (t % k, w)).collect();
        prop_assume!(targets.iter().any(|&(_, w)| w > 0.0));
        let m = controlled_mixture(&targets, k).unwrap();
        for t in 0..k {
            let listed = targets.iter().any(|&(x, _)| x == t);
            if !listed {
                prop_assert_eq!(m.theta[t].to_bits(), 0f64.to_bits());
            }
        }
        prop_assert!((m.theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn controlled_mode_only_lights_target_words() {
    let words = ["a", "b", "c", "d"];
    let vocab = Vocabulary::from_tokens(&words);
    let w = vocab.len();
    let mut phi = vec![0.0; 2 * w];
    phi[vocab.id("a").unwrap()] = 0.5;
    phi[vocab.id("b").unwrap()] = 0.5;
    phi[w + vocab.id("c").unwrap()] = 0.5;
    phi[w + vocab.id("d").unwrap()] = 0.5;
    let model = TopicModel::from_phi(2, w, phi, LdaConfig::default()).unwrap();
    let sw = Stopwords::default();
    let cfg = LdaConfig::default();
    let ctx = GuidanceContext {
        model: &model,
        ffn: None,
        vocab: &vocab,
        stopwords: &sw,
        fold_in: &cfg,
    };
    let ex = Example {
        id: "x".into(),
        source: vocab.encode(&["a", "c", "b", "d", "c"]),
        summary: vec![],
        target_topics: Some(vec![(1, 1.0)]),
        topic_prompt: None,
    };
    let g = ctx.guidance(&ex, GuidanceMode::Controlled).unwrap();
    let lit: Vec<bool> = g.scores.iter().map(|&s| s > OOV_SCORE).collect();
    assert_eq!(lit, vec![false, true, false, true, true]);
    assert!(ctx.guidance(&ex, GuidanceMode::Ffn).is_err());
    let bare = Example { target_topics: None, ..ex };
    assert!(ctx.guidance(&bare, GuidanceMode::Controlled).is_err());
}

struct Fixture {
    vocab: Vocabulary,
    model: TopicModel,
    lda: LdaConfig,
    train: Vec<Example>,
    held_out: Vec<Example>,
    dominant: Vec<bool>,
}

/// Synthetic corpus split 160/40 documents with a 4-topic model trained on
/// the training sources.
fn fixture() -> Fixture {
    let cfg = SynthConfig {
        k_true: 4,
        n_docs: 200,
        concentration: 0.5,
        seed: 11,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&cfg).unwrap();
    let docs: Vec<Vec<String>> = corpus
        .examples
        .iter()
        .flat_map(|e| [e.source_tokens(), e.summary_tokens()])
        .collect();
    let vocab = Vocabulary::build(&docs, 1).unwrap();
    let examples = encode_training(&corpus.examples, &vocab).unwrap();
    let split = 160 * 2;
    let sw = Stopwords::default();
    let lda_docs: Vec<Vec<usize>> = examples[..split]
        .iter()
        .step_by(2)
        .map(|e| lda_tokens(&e.source, &vocab, &sw))
        .collect();
    let lda = LdaConfig {
        k: 4,
        alpha: Some(0.1),
        iterations: 300,
        burn_in: 150,
        lag: 10,
        seed: 3,
        ..LdaConfig::default()
    };
    let model = train_gibbs(&lda_docs, vocab.len(), &lda).unwrap();
    let dominant = (0..examples.len())
        .map(|i| {
            let p = corpus.labels.proportions[i / 2];
            (i % 2 == 0) == (p >= 0.5)
        })
        .collect::<Vec<_>>();
    Fixture {
        held_out: examples[split..].to_vec(),
        train: examples[..split].to_vec(),
        dominant: dominant[split..].to_vec(),
        vocab,
        model,
        lda,
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

#[test]
fn trained_ffn_tracks_lda_targets() {
    let fx = fixture();
    let sw = Stopwords::default();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = fx
        .train
        .iter()
        .map(|e| {
            let x = l1_normalize(bow(&e.source, fx.vocab.len()));
            let t = target_tau(&fx.model, &e.summary, &fx.vocab, &sw, &fx.lda).unwrap();
            (x, t.tau)
        })
        .collect();
    let ffn = train_ffn(&pairs, &FfnConfig::default()).unwrap();
    let ctx = GuidanceContext {
        model: &fx.model,
        ffn: Some(&ffn.weights),
        vocab: &fx.vocab,
        stopwords: &sw,
        fold_in: &fx.lda,
    };

    // Each source yields one summary per topic; only the dominant topic's
    // summary is recoverable from the source alone.
    let uniform = vec![1.0 / fx.vocab.len() as f64; fx.vocab.len()];
    let (mut within, mut agree, mut scored) = (0, 0, 0);
    for (e, _) in fx.held_out.iter().zip(&fx.dominant).filter(|(_, &d)| d) {
        let target = ctx.tau(e, GuidanceMode::LdaTarget).unwrap();
        let pred = ctx.tau(e, GuidanceMode::Ffn).unwrap();
        if kl(&target.tau, &pred.tau) < 0.5 * kl(&target.tau, &uniform) {
            within += 1;
        }
        let g = ctx.guidance(e, GuidanceMode::Ffn).unwrap();
        let gt = ctx.guidance(e, GuidanceMode::LdaTarget).unwrap();
        assert_eq!(g.len(), e.source.len());
        scored += 1;
        if g.argmax() == gt.argmax() {
            agree += 1;
        }
    }
    assert_eq!(scored, 40);
    assert_eq!(within, scored, "{within}/{scored}");
    assert!(agree * 10 >= scored * 7, "argmax agreement {agree}/{scored}");
}
