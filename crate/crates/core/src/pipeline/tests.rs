use super::*;
use crate::lda::TopicModel;

fn raw(id: &str, source: &str, summary: &str, topic: Option<usize>) -> RawExample {
    RawExample {
        id: id.into(),
        source: source.into(),
        summary: summary.into(),
        target_topics: topic.map(|t| vec![(t, 1.0)]),
        topic_prompt: None,
    }
}

fn gen(id: &str, summary: &str) -> Generation {
    Generation {
        id: id.into(),
        summary: summary.into(),
        logprob: -1.0,
        normalized_score: -0.5,
    }
}

/// Two topics over `apple pear` and `rock stone`.
fn two_topics() -> (Vocabulary, TopicModel, LdaConfig) {
    let vocab = Vocabulary::from_tokens(&["apple", "pear", "rock", "stone"]);
    let v = vocab.len();
    let mut phi = vec![0.0; 2 * v];
    for (t, words) in [["apple", "pear"], ["rock", "stone"]].iter().enumerate() {
        for w in words {
            phi[t * v + vocab.id(w).unwrap()] = 0.5;
        }
    }
    let cfg = LdaConfig {
        k: 2,
        alpha: Some(0.1),
        ..LdaConfig::default()
    };
    let model = TopicModel::from_phi(2, v, phi, cfg.clone()).unwrap();
    (vocab, model, cfg)
}

#[test]
fn topics_align_by_word_mass() {
    let (vocab, model, _) = two_topics();
    let labels = vec![
        vec!["rock".to_string(), "stone".to_string()],
        vec!["apple".to_string(), "pear".to_string()],
    ];
    let map = align_topics(&model, &vocab, &labels);
    assert_eq!(map, vec![1, 0]);
    let mut ex = vec![raw("a", "x", "y", Some(0)), raw("b", "x", "y", None)];
    remap_targets(&mut ex, &map).unwrap();
    assert_eq!(ex[0].target_topics, Some(vec![(1, 1.0)]));
    assert_eq!(ex[1].target_topics, None);
    assert!(remap_targets(&mut [raw("c", "x", "y", Some(5))], &map).is_err());
}

#[test]
fn evaluate_on_hand_examples() {
    let (vocab, model, cfg) = two_topics();
    let sw = Stopwords::default();
    let refs = vec![
        raw("1", "src", "the cat sat", Some(0)),
        raw("2", "src", "apple pear", Some(0)),
    ];
    let gens = vec![gen("2", "apple pear apple"), gen("1", "the cat ran")];
    let rep = evaluate(&gens, &refs, &vocab, &model, &sw, &cfg).unwrap();
    assert_eq!(rep.n_examples, 2);
    assert_eq!(rep.rouge1.recall, (2.0 / 3.0 + 1.0) / 2.0);
    assert_eq!(rep.rouge2.f1, (0.5 + 2.0 * 0.5 / 1.5) / 2.0);
    // "the cat ran" has no topic word and falls back to 1/K
    assert_eq!(rep.topic_focus_fallbacks, 1);
    let tf = rep.topic_focus.unwrap();
    assert!(tf > 0.7 && tf < 0.75, "{tf}");
    assert_eq!(rep.test_set_hash, dataset_hash(&refs));

    assert!(evaluate(&gens[..1], &refs, &vocab, &model, &sw, &cfg).is_err());
    let wrong = vec![gen("1", "a"), gen("3", "b")];
    assert!(evaluate(&wrong, &refs, &vocab, &model, &sw, &cfg).is_err());
    let no_targets = vec![raw("1", "s", "a", None), raw("2", "s", "b", Some(1))];
    let rep = evaluate(&gens, &no_targets, &vocab, &model, &sw, &cfg).unwrap();
    assert_eq!(rep.topic_focus, None);
}

#[test]
fn compare_checks_test_set() {
    let (vocab, model, cfg) = two_topics();
    let sw = Stopwords::default();
    let refs = vec![raw("1", "src", "apple pear", Some(0))];
    let a = evaluate(&[gen("1", "rock stone")], &refs, &vocab, &model, &sw, &cfg).unwrap();
    let b = evaluate(&[gen("1", "apple pear")], &refs, &vocab, &model, &sw, &cfg).unwrap();
    let same = compare(&a, &a).unwrap();
    assert_eq!((same.rouge1_f1, same.rouge2_f1, same.rouge_l_f1), (0.0, 0.0, 0.0));
    assert_eq!(same.topic_focus, Some(0.0));
    let d = compare(&a, &b).unwrap();
    assert_eq!(d.rouge1_f1, 1.0);
    assert_eq!(d.topic_focus_improved, Some(true));

    let other = EvalReport {
        test_set_hash: "other".into(),
        ..a.clone()
    };
    assert!(compare(&a, &other).is_err());
    let fewer = EvalReport {
        n_examples: 3,
        ..a.clone()
    };
    assert!(compare(&a, &fewer).is_err());
}

#[test]
fn synth_split_holds_out_whole_documents() {
    let cfg = SynthConfig {
        n_docs: 10,
        ..SynthConfig::default()
    };
    let s = synth_splits(&cfg, 3).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (14, 6));
    let train_src: HashSet<&str> = s.train.iter().map(|e| e.source.as_str()).collect();
    assert!(s.test.iter().all(|e| !train_src.contains(e.source.as_str())));
    assert!(synth_splits(&cfg, 10).is_err());
    let vocab = build_vocab(&s.train, 1).unwrap();
    let train = encode_training(&s.train, &vocab).unwrap();
    assert_eq!(lda_documents(&train, &vocab, &Stopwords::default()).len(), 7);
}

#[test]
fn vocab_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, _, _) = two_topics();
    let p = dir.path().join("v.json");
    save_vocab(&p, &vocab).unwrap();
    let back = load_vocab(&p).unwrap();
    assert_eq!(back.hash(), vocab.hash());
    assert_eq!(back.id("rock"), vocab.id("rock"));
}

fn tiny_config(dir: &Path) -> RunConfig {
    RunConfig {
        seed: Some(1),
        output_dir: dir.to_path_buf(),
        data: DataConfig {
            synth: Some(SynthConfig {
                k_true: 2,
                n_docs: 12,
                doc_len: 10,
                summary_len: 3,
                ..SynthConfig::default()
            }),
            test_docs: 3,
            ..DataConfig::default()
        },
        lda: LdaConfig {
            k: 2,
            alpha: Some(0.1),
            iterations: 40,
            burn_in: 20,
            lag: 5,
            ..LdaConfig::default()
        },
        ffn: crate::guidance::FfnConfig {
            epochs: 2,
            ..Default::default()
        },
        model: ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ffn_width: 8,
            max_positions: 32,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 2,
            lr: 0.01,
            batch_size: 4,
            ..TrainConfig::default()
        },
        decode: DecodeConfig {
            min_length: 2,
            max_length: 4,
            ..DecodeConfig::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn tiny_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_pipeline(&tiny_config(&dir.path().join("a"))).unwrap();
    let b = run_pipeline(&tiny_config(&dir.path().join("b"))).unwrap();
    assert_eq!(a.artifacts, b.artifacts);
    assert_eq!(
        a.reports.keys().collect::<Vec<_>>(),
        ["baseline", "topical-controlled", "topical-ffn"]
    );
    for name in a.reports.keys() {
        let rel = format!("reports/{name}.json");
        let ra = std::fs::read(dir.path().join("a").join(&rel)).unwrap();
        let rb = std::fs::read(dir.path().join("b").join(&rel)).unwrap();
        assert_eq!(ra, rb);
    }
    let stamp = checkpoint::read_stamp(&dir.path().join("a/lda.ckpt")).unwrap().unwrap();
    assert_eq!(stamp["config_hash"], a.config_hash.as_str());
    assert_eq!(stamp["seed"], 1);
    let gens = read_jsonl_generations(&dir.path().join("a/generations/baseline.jsonl"));
    assert_eq!(gens.len(), 6);
    assert!(gens.iter().all(|g| (2..=4).contains(&tokenize(&g.summary).len())));
}

fn read_jsonl_generations(path: &Path) -> Vec<Generation> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn missing_input_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output_dir: dir.path().join("out"),
        data: DataConfig {
            train: Some(dir.path().join("absent.jsonl")),
            test: Some(dir.path().join("absent.jsonl")),
            ..DataConfig::default()
        },
        ..RunConfig::default()
    };
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "data.train"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.train.lr = f64::INFINITY;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::Stage { ref stage, .. } if stage == "train-baseline"), "{err}");
    // earlier artifacts are kept
    assert!(dir.path().join("lda.ckpt").exists());
}
