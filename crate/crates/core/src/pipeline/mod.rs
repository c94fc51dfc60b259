//! End-to-end runs: corpus, topic model, guidance reconstructor, baseline and
//! topical summarizers, generation, and evaluation.

mod config;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{DataConfig, GuidanceConfig, RunConfig};

use crate::checkpoint;
use crate::corpus::{
    bow, dataset_hash, encode_training, l1_normalize, read_jsonl, synth_corpus, tokenize, write_jsonl,
    Example, RawExample, Stopwords, SynthConfig, SynthLabels, Vocabulary,
};
use crate::decode::{beam_search, DecodeConfig};
use crate::error::{Error, Result};
use crate::guidance::{target_tau, train_ffn, GuidanceContext, GuidanceMode, GuidanceVector};
use crate::lda::{lda_tokens, select_k, train_gibbs, KSelection, LdaConfig, TopicModel};
use crate::metrics::{rouge_all, topic_focus};
use crate::model::{encoder_input, train_summarizer, ModelConfig, ModelWeights, TrainConfig};

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(vocab)?)?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let mut v: Vocabulary = serde_json::from_slice(&std::fs::read(path)?)?;
    v.reindex();
    Ok(v)
}

pub fn load_stopwords(path: Option<&Path>) -> Result<Stopwords> {
    path.map_or_else(|| Ok(Stopwords::default()), Stopwords::load)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<RawExample>,
    pub test: Vec<RawExample>,
    pub labels: Option<SynthLabels>,
}

/// Synthetic corpus with the last `test_docs` documents held out.
pub fn synth_splits(cfg: &SynthConfig, test_docs: usize) -> Result<Splits> {
    if test_docs == 0 || test_docs >= cfg.n_docs {
        return Err(Error::Config {
            field: "data.test_docs".into(),
            msg: "must lie in 1..n_docs".into(),
        });
    }
    let corpus = synth_corpus(cfg)?;
    let cut = 2 * (cfg.n_docs - test_docs);
    let mut train = corpus.examples;
    let test = train.split_off(cut);
    Ok(Splits {
        train,
        test,
        labels: Some(corpus.labels),
    })
}

/// Vocabulary over training sources, summaries, and prompts.
pub fn build_vocab(train: &[RawExample], min_count: usize) -> Result<Vocabulary> {
    let docs: Vec<Vec<String>> = train
        .iter()
        .flat_map(|e| {
            let mut d = vec![e.source_tokens(), e.summary_tokens()];
            if let Some(p) = &e.topic_prompt {
                d.push(tokenize(p));
            }
            d
        })
        .collect();
    Vocabulary::build(&docs, min_count)
}

/// LDA documents: each distinct training source once, stopwords removed.
pub fn lda_documents(train: &[Example], vocab: &Vocabulary, stopwords: &Stopwords) -> Vec<Vec<usize>> {
    let mut seen = HashSet::new();
    train
        .iter()
        .filter(|e| seen.insert(e.source.clone()))
        .map(|e| lda_tokens(&e.source, vocab, stopwords))
        .collect()
}

/// Matches each labelled topic to the learned topic holding the most
/// probability mass on its words (ties: lowest id).
pub fn align_topics(model: &TopicModel, vocab: &Vocabulary, topic_vocab: &[Vec<String>]) -> Vec<usize> {
    topic_vocab
        .iter()
        .map(|words| {
            let ids: Vec<usize> = words.iter().filter_map(|w| vocab.id(w)).collect();
            let mass = |t: usize| ids.iter().map(|&i| model.phi_row(t)[i]).sum::<f64>();
            (0..model.k()).fold(0, |best, t| if mass(t) > mass(best) { t } else { best })
        })
        .collect()
}

/// Rewrites `target_topics` through `map`.
pub fn remap_targets(examples: &mut [RawExample], map: &[usize]) -> Result<()> {
    for ex in examples {
        if let Some(targets) = ex.target_topics.as_mut() {
            for (t, _) in targets.iter_mut() {
                *t = *map.get(*t).ok_or_else(|| {
                    Error::invalid(format!("example `{}`: topic {t} missing from the topic map", ex.id))
                })?;
            }
        }
    }
    Ok(())
}

/// FFN training pairs: source term frequencies and the reference summary's τ.
pub fn ffn_pairs(
    train: &[Example],
    model: &TopicModel,
    vocab: &Vocabulary,
    stopwords: &Stopwords,
    fold_cfg: &LdaConfig,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    train
        .iter()
        .map(|e| {
            let x = l1_normalize(bow(&e.source, vocab.len()));
            let t = target_tau(model, &e.summary, vocab, stopwords, fold_cfg)?;
            Ok((x, t.tau))
        })
        .collect()
}

/// Guidance for each example, or `None` everywhere without a mode.
pub fn guidance_for(
    examples: &[Example],
    ctx: &GuidanceContext<'_>,
    mode: Option<GuidanceMode>,
) -> Result<Vec<Option<GuidanceVector>>> {
    examples
        .iter()
        .map(|e| mode.map(|m| ctx.guidance(e, m)).transpose())
        .collect()
}

/// One line of a generation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub summary: String,
    pub logprob: f64,
    pub normalized_score: f64,
}

pub fn generate(
    weights: &ModelWeights,
    examples: &[Example],
    guidance: &[Option<GuidanceVector>],
    vocab: &Vocabulary,
    decode: &DecodeConfig,
    use_prompt: bool,
) -> Result<Vec<Generation>> {
    if examples.len() != guidance.len() {
        return Err(Error::shape(
            "generate",
            format!("{} examples, {} guidance vectors", examples.len(), guidance.len()),
        ));
    }
    examples
        .iter()
        .zip(guidance)
        .map(|(ex, gv)| {
            let (ids, prefix) = encoder_input(ex, use_prompt);
            let gv = gv.clone().map(|g| g.with_prefix(prefix));
            let prepared = weights.prepare(&ids, gv.as_ref())?;
            let hyp = beam_search(&prepared, decode)?;
            Ok(Generation {
                id: ex.id.clone(),
                summary: vocab.decode_text(&hyp.tokens),
                logprob: hyp.logprob,
                normalized_score: hyp.score(decode.length_penalty),
            })
        })
        .collect()
}

/// Corpus means of the per-example scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rouge1: RougeSummary,
    pub rouge2: RougeSummary,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeSummary,
    /// `None` when some reference has no target topic.
    pub topic_focus: Option<f64>,
    /// Summaries with no in-vocabulary token, scored at `1/K`.
    pub topic_focus_fallbacks: usize,
    pub n_examples: usize,
    pub test_set_hash: String,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Main target topic of a reference (largest weight, first on ties).
fn main_target(ex: &RawExample) -> Option<usize> {
    let targets = ex.target_topics.as_ref()?;
    let mut best: Option<(usize, f64)> = None;
    for &(t, w) in targets {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((t, w));
        }
    }
    best.map(|(t, _)| t)
}

/// ROUGE against the references and topic focus on their target topics.
/// Every reference must have exactly one generation.
pub fn evaluate(
    generated: &[Generation],
    references: &[RawExample],
    vocab: &Vocabulary,
    model: &TopicModel,
    stopwords: &Stopwords,
    fold_cfg: &LdaConfig,
) -> Result<EvalReport> {
    if references.is_empty() {
        return Err(Error::invalid("no reference examples"));
    }
    if generated.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} generations for {} references",
            generated.len(),
            references.len()
        )));
    }
    let by_id: BTreeMap<&str, &Generation> = generated.iter().map(|g| (g.id.as_str(), g)).collect();
    let mut sums = [RougeSummary::default(); 3];
    let mut summaries = Vec::with_capacity(references.len());
    for r in references {
        let g = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::invalid(format!("no generation for reference `{}`", r.id)))?;
        let cand = tokenize(&g.summary);
        let triple = rouge_all(&cand, &r.summary_tokens());
        for (acc, s) in sums.iter_mut().zip([triple.rouge1, triple.rouge2, triple.rouge_l]) {
            acc.precision += s.precision;
            acc.recall += s.recall;
            acc.f1 += s.f1;
        }
        summaries.push(lda_tokens(&vocab.encode(&cand), vocab, stopwords));
    }
    let n = references.len() as f64;
    let [rouge1, rouge2, rouge_l] = sums.map(|s| RougeSummary {
        precision: s.precision / n,
        recall: s.recall / n,
        f1: s.f1 / n,
    });
    let targets: Option<Vec<usize>> = references.iter().map(main_target).collect();
    let (topic_focus, fallbacks) = match targets {
        Some(t) => {
            let rep = topic_focus(model, &summaries, &t, fold_cfg)?;
            (Some(rep.mean), rep.fallback.iter().filter(|&&f| f).count())
        }
        None => (None, 0),
    };
    Ok(EvalReport {
        rouge1,
        rouge2,
        rouge_l,
        topic_focus,
        topic_focus_fallbacks: fallbacks,
        n_examples: references.len(),
        test_set_hash: dataset_hash(references),
        config_hash: None,
        seed: None,
    })
}

/// `candidate - baseline` for every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rouge1_f1: f64,
    pub rouge2_f1: f64,
    #[serde(rename = "rougeL_f1")]
    pub rouge_l_f1: f64,
    pub topic_focus: Option<f64>,
    /// Whether the candidate focuses more on the target topics.
    pub topic_focus_improved: Option<bool>,
    pub n_examples: usize,
    pub test_set_hash: String,
}

pub fn compare(baseline: &EvalReport, candidate: &EvalReport) -> Result<Comparison> {
    if baseline.test_set_hash != candidate.test_set_hash {
        return Err(Error::invalid("reports come from different test sets (hash mismatch)"));
    }
    if baseline.n_examples != candidate.n_examples {
        return Err(Error::invalid(format!(
            "reports cover {} and {} examples",
            baseline.n_examples, candidate.n_examples
        )));
    }
    let tf = match (baseline.topic_focus, candidate.topic_focus) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    Ok(Comparison {
        rouge1_f1: candidate.rouge1.f1 - baseline.rouge1.f1,
        rouge2_f1: candidate.rouge2.f1 - baseline.rouge2.f1,
        rouge_l_f1: candidate.rouge_l.f1 - baseline.rouge_l.f1,
        topic_focus: tf,
        topic_focus_improved: tf.map(|d| d > 0.0),
        n_examples: baseline.n_examples,
        test_set_hash: baseline.test_set_hash.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub synth: Option<u64>,
    pub lda: u64,
    pub ffn: u64,
    pub train: u64,
}

/// Provenance stamped into every checkpoint of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStamp {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub vocab_hash: String,
    pub train_set_hash: String,
    pub test_set_hash: String,
    pub num_topics: usize,
    pub topic_selection: Option<KSelection>,
    /// Labelled topic -> learned topic, for synthetic corpora.
    pub topic_map: Option<Vec<usize>>,
    pub ffn_epoch_losses: Vec<f64>,
    pub train_losses: BTreeMap<String, Vec<f64>>,
    /// Output-relative path -> SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub reports: BTreeMap<String, EvalReport>,
    pub comparisons: BTreeMap<String, Comparison>,
}

pub const BASELINE: &str = "baseline";

fn run_name(mode: GuidanceMode) -> String {
    let m = match mode {
        GuidanceMode::Ffn => "ffn",
        GuidanceMode::LdaTarget => "lda-target",
        GuidanceMode::Controlled => "controlled",
    };
    format!("topical-{m}")
}

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    stamp: RunStamp,
    artifacts: BTreeMap<String, String>,
}

impl Run<'_> {
    fn stage<T>(&self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        log::info!("stage {name}: start");
        let out = f().map_err(|e| e.in_stage(name))?;
        log::info!("stage {name}: done in {:.1}s", start.elapsed().as_secs_f64());
        Ok(out)
    }

    fn record(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        self.artifacts.insert(rel.to_string(), file_sha256(&path)?);
        Ok(path)
    }

    fn checkpoint(&mut self, rel: &str) -> Result<()> {
        checkpoint::stamp(&self.dir.join(rel), &self.stamp)?;
        self.record(rel).map(|_| ())
    }

    fn train_model(
        &mut self,
        name: &str,
        model_cfg: &ModelConfig,
        examples: &[Example],
        guidance: &[Option<GuidanceVector>],
        vocab_hash: &str,
    ) -> Result<(ModelWeights, Vec<f64>)> {
        let dir = self.dir.join(name);
        let train_cfg: &TrainConfig = &self.cfg.train;
        let trained = self.stage(&format!("train-{name}"), || {
            train_summarizer(examples, guidance, model_cfg, train_cfg, Some(&dir), vocab_hash)
        })?;
        for epoch in 1..=train_cfg.epochs {
            self.checkpoint(&format!("{name}/epoch-{epoch}.ckpt"))?;
        }
        Ok((trained.weights, trained.epochs.iter().map(|e| e.train_loss).collect()))
    }
}

/// Runs every stage and writes the artifacts, reports, and `manifest.json`
/// under `cfg.output_dir`. Partial outputs are kept when a stage fails.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    for sub in ["data", "generations", "reports"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let config_hash = cfg.hash();
    let mut run = Run {
        cfg: &cfg,
        dir: &dir,
        stamp: RunStamp {
            config_hash: config_hash.clone(),
            seed: cfg.train.seed,
        },
        artifacts: BTreeMap::new(),
    };
    let stopwords = load_stopwords(cfg.data.stopwords.as_deref())?;

    let mut splits = run.stage("data", || match &cfg.data.synth {
        Some(s) => synth_splits(s, cfg.data.test_docs),
        None => Ok(Splits {
            train: read_jsonl(cfg.data.train.as_deref().expect("validated"))?,
            test: read_jsonl(cfg.data.test.as_deref().expect("validated"))?,
            labels: None,
        }),
    })?;

    let vocab = run.stage("vocab", || build_vocab(&splits.train, cfg.data.min_count))?;
    save_vocab(&dir.join("vocab.json"), &vocab)?;
    run.record("vocab.json")?;
    let vocab_hash = vocab.hash();

    let (topics, selection, lda_cfg) = run.stage("lda", || {
        let train = encode_training(&splits.train, &vocab)?;
        let docs = lda_documents(&train, &vocab, &stopwords);
        if cfg.topic_candidates.is_empty() {
            Ok((train_gibbs(&docs, vocab.len(), &cfg.lda)?, None, cfg.lda.clone()))
        } else {
            let (sel, model) = select_k(&docs, vocab.len(), &cfg.topic_candidates, &cfg.lda)?;
            let lda = LdaConfig {
                k: sel.best_k,
                ..cfg.lda.clone()
            };
            Ok((model, Some(sel), lda))
        }
    })?;
    topics.save(&dir.join("lda.ckpt"), &vocab_hash)?;
    run.checkpoint("lda.ckpt")?;

    let topic_map = match &splits.labels {
        Some(labels) => {
            let map = align_topics(&topics, &vocab, &labels.topic_vocab);
            if map.iter().collect::<HashSet<_>>().len() != map.len() {
                log::warn!("labelled topics share a learned topic: {map:?}");
            }
            remap_targets(&mut splits.train, &map)?;
            remap_targets(&mut splits.test, &map)?;
            Some(map)
        }
        None => None,
    };
    write_jsonl(&dir.join("data/train.jsonl"), &splits.train)?;
    write_jsonl(&dir.join("data/test.jsonl"), &splits.test)?;
    run.record("data/train.jsonl")?;
    run.record("data/test.jsonl")?;

    let train = encode_training(&splits.train, &vocab)?;
    let test: Vec<Example> = splits
        .test
        .iter()
        .map(|r| r.encode(&vocab))
        .collect::<Result<_>>()?;

    let ffn = run.stage("ffn", || {
        let pairs = ffn_pairs(&train, &topics, &vocab, &stopwords, &lda_cfg)?;
        train_ffn(&pairs, &cfg.ffn)
    })?;
    ffn.weights.save(&dir.join("ffn.ckpt"), &vocab_hash, &cfg.ffn)?;
    run.checkpoint("ffn.ckpt")?;

    let ctx = GuidanceContext {
        model: &topics,
        ffn: Some(&ffn.weights),
        vocab: &vocab,
        stopwords: &stopwords,
        fold_in: &lda_cfg,
    };
    let base_cfg = ModelConfig {
        vocab_size: vocab.len(),
        topical_attention: false,
        ..cfg.model.clone()
    };
    let topical_cfg = ModelConfig {
        topical_attention: true,
        ..base_cfg.clone()
    };
    let mut train_losses = BTreeMap::new();
    let none = vec![None; train.len()];
    let (baseline, losses) = run.train_model(BASELINE, &base_cfg, &train, &none, &vocab_hash)?;
    train_losses.insert(BASELINE.to_string(), losses);
    let train_guidance = run.stage("guidance", || guidance_for(&train, &ctx, Some(cfg.guidance.train_mode)))?;
    let (topical, losses) = run.train_model("topical", &topical_cfg, &train, &train_guidance, &vocab_hash)?;
    train_losses.insert("topical".to_string(), losses);

    let mut systems: Vec<(String, &ModelWeights, Option<GuidanceMode>)> = vec![(BASELINE.into(), &baseline, None)];
    for &mode in &cfg.guidance.eval_modes {
        systems.push((run_name(mode), &topical, Some(mode)));
    }
    let mut reports = BTreeMap::new();
    for (name, weights, mode) in systems {
        let gens = run.stage(&format!("generate-{name}"), || {
            let gv = guidance_for(&test, &ctx, mode)?;
            generate(weights, &test, &gv, &vocab, &cfg.decode, cfg.train.use_prompt)
        })?;
        let rel = format!("generations/{name}.jsonl");
        write_jsonl(&dir.join(&rel), &gens)?;
        run.record(&rel)?;
        let mut report = run.stage(&format!("evaluate-{name}"), || {
            evaluate(&gens, &splits.test, &vocab, &topics, &stopwords, &lda_cfg)
        })?;
        report.config_hash = Some(config_hash.clone());
        report.seed = Some(cfg.train.seed);
        let rel = format!("reports/{name}.json");
        write_json(&dir.join(&rel), &report)?;
        run.record(&rel)?;
        reports.insert(name, report);
    }

    let mut comparisons = BTreeMap::new();
    for (name, report) in &reports {
        if name != BASELINE {
            comparisons.insert(format!("{name}-vs-{BASELINE}"), compare(&reports[BASELINE], report)?);
        }
    }
    write_json(&dir.join("reports/comparisons.json"), &comparisons)?;
    run.record("reports/comparisons.json")?;

    let manifest = Manifest {
        config_hash,
        seeds: Seeds {
            synth: cfg.data.synth.as_ref().map(|s| s.seed),
            lda: cfg.lda.seed,
            ffn: cfg.ffn.seed,
            train: cfg.train.seed,
        },
        vocab_hash,
        train_set_hash: dataset_hash(&splits.train),
        test_set_hash: dataset_hash(&splits.test),
        num_topics: topics.k(),
        topic_selection: selection,
        topic_map,
        ffn_epoch_losses: ffn.epoch_losses,
        train_losses,
        artifacts: run.artifacts,
        reports,
        comparisons,
        config: cfg.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests;
