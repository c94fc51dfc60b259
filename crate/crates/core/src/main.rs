use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use topicsum::corpus::{encode_training, read_jsonl, write_jsonl, Example, RawExample, SynthLabels};
use topicsum::guidance::{train_ffn, FfnWeights, GuidanceContext, GuidanceMode};
use topicsum::lda::{select_k, train_gibbs, LdaConfig, TopicModel};
use topicsum::model::{train_summarizer, ModelConfig, ModelWeights};
use topicsum::pipeline::{
    align_topics, build_vocab, compare, evaluate, ffn_pairs, generate, guidance_for, lda_documents,
    load_stopwords, load_vocab, read_json, remap_targets, run_pipeline, save_vocab, synth_splits,
    write_json, EvalReport, Generation, RunConfig,
};
use topicsum::{Error, Result};

#[derive(Parser)]
#[command(name = "topicsum", version, about = "Topic-guided summarization pipeline")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run config supplying defaults for every flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of every component.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        Ok(cfg.resolved())
    }
}

#[derive(Args)]
struct LdaFlags {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    lag: Option<usize>,
}

impl LdaFlags {
    fn apply(&self, cfg: &mut LdaConfig) {
        set(&mut cfg.k, self.k);
        if self.alpha.is_some() {
            cfg.alpha = self.alpha;
        }
        set(&mut cfg.eta, self.eta);
        set(&mut cfg.iterations, self.iterations);
        set(&mut cfg.burn_in, self.burn_in);
        set(&mut cfg.lag, self.lag);
    }
}

#[derive(Args)]
struct TopicArgs {
    #[command(flatten)]
    common: Common,
    /// Training set (JSONL).
    #[arg(long)]
    train: PathBuf,
    /// Vocabulary file; built from the training set when absent.
    #[arg(long)]
    vocab: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Stopword file (one token per line).
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Synthetic labels; writes the labelled-to-learned topic map here.
    #[arg(long, requires = "topic_map_out")]
    labels: Option<PathBuf>,
    #[arg(long)]
    topic_map_out: Option<PathBuf>,
    #[command(flatten)]
    lda: LdaFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum GuidanceArg {
    None,
    LdaTarget,
    Ffn,
    Controlled,
}

impl GuidanceArg {
    fn mode(self) -> Option<GuidanceMode> {
        match self {
            Self::None => None,
            Self::LdaTarget => Some(GuidanceMode::LdaTarget),
            Self::Ffn => Some(GuidanceMode::Ffn),
            Self::Controlled => Some(GuidanceMode::Controlled),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/test corpus and its labels.
    SynthCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        k_true: Option<usize>,
        #[arg(long)]
        vocab_per_topic: Option<usize>,
        #[arg(long)]
        n_docs: Option<usize>,
        #[arg(long)]
        doc_len: Option<usize>,
        #[arg(long)]
        summary_len: Option<usize>,
        #[arg(long)]
        concentration: Option<f64>,
        #[arg(long)]
        test_docs: Option<usize>,
    },
    /// Train an LDA model with a fixed number of topics.
    TrainLda(TopicArgs),
    /// Train one LDA model per candidate K and keep the best.
    SelectTopics {
        #[command(flatten)]
        topic: TopicArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        candidates: Vec<usize>,
        /// Per-K table (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the guidance reconstructor.
    TrainFfn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        lda: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long, default_value_t = 15)]
        epochs: usize,
        /// Hidden width; 0 is a single linear layer.
        #[arg(long, default_value_t = 0)]
        hidden: usize,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Train a summarizer; topical attention is on unless guidance is `none`.
    TrainSummarizer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "none")]
        guidance: GuidanceArg,
        #[command(flatten)]
        inputs: GuidanceInputs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        d_model: Option<usize>,
        #[arg(long)]
        n_heads: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        /// Ignore topic prompts.
        #[arg(long)]
        no_prompt: bool,
    },
    /// Beam-search summaries for a test set (JSONL output).
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `controlled` for topical models, `none` otherwise.
        #[arg(long, value_enum)]
        guidance: Option<GuidanceArg>,
        #[command(flatten)]
        inputs: GuidanceInputs,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        length_penalty: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        no_repeat_ngram: Option<usize>,
        #[arg(long, overrides_with = "no_early_stopping")]
        early_stopping: bool,
        #[arg(long)]
        no_early_stopping: bool,
        #[arg(long)]
        no_prompt: bool,
    },
    /// ROUGE and topic focus of generated summaries (JSON report).
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        lda: PathBuf,
        #[arg(long)]
        topic_map: Option<PathBuf>,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metric deltas of report B relative to report A.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage from one config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GuidanceInputs {
    #[arg(long)]
    lda: Option<PathBuf>,
    #[arg(long)]
    ffn: Option<PathBuf>,
    /// Labelled-to-learned topic map applied to `target_topics`.
    #[arg(long)]
    topic_map: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn missing(field: &str) -> Error {
    Error::Config {
        field: field.to_string(),
        msg: "required for this guidance mode".into(),
    }
}

fn require(field: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config {
            field: field.to_string(),
            msg: format!("{} does not exist", path.display()),
        })
    }
}

fn load_lda(path: &Path, vocab_hash: &str) -> Result<TopicModel> {
    require("lda", path)?;
    let (model, hash) = TopicModel::load(path)?;
    if hash != vocab_hash {
        return Err(Error::InvalidArgument(format!(
            "{} was trained with a different vocabulary",
            path.display()
        )));
    }
    Ok(model)
}

fn read_examples(field: &str, path: &Path, topic_map: Option<&Path>) -> Result<Vec<RawExample>> {
    require(field, path)?;
    let mut raw = read_jsonl(path)?;
    if let Some(p) = topic_map {
        require("topic_map", p)?;
        let map: Vec<usize> = read_json(p)?;
        remap_targets(&mut raw, &map)?;
    }
    Ok(raw)
}

/// Resources behind guidance, loaded only when a mode needs them.
struct Guidance {
    model: TopicModel,
    ffn: Option<FfnWeights>,
    stopwords: topicsum::corpus::Stopwords,
    fold_in: LdaConfig,
}

impl Guidance {
    fn load(inputs: &GuidanceInputs, mode: GuidanceMode, vocab_hash: &str) -> Result<Self> {
        let model = load_lda(inputs.lda.as_deref().ok_or_else(|| missing("lda"))?, vocab_hash)?;
        let ffn = match (mode, &inputs.ffn) {
            (GuidanceMode::Ffn, None) => return Err(missing("ffn")),
            (_, Some(p)) => {
                require("ffn", p)?;
                Some(FfnWeights::load(p)?.0)
            }
            _ => None,
        };
        Ok(Self {
            fold_in: model.config.clone(),
            model,
            ffn,
            stopwords: load_stopwords(inputs.stopwords.as_deref())?,
        })
    }

    fn for_examples(
        &self,
        examples: &[Example],
        vocab: &topicsum::corpus::Vocabulary,
        mode: GuidanceMode,
    ) -> Result<Vec<Option<topicsum::guidance::GuidanceVector>>> {
        let ctx = GuidanceContext {
            model: &self.model,
            ffn: self.ffn.as_ref(),
            vocab,
            stopwords: &self.stopwords,
            fold_in: &self.fold_in,
        };
        guidance_for(examples, &ctx, Some(mode))
    }
}

fn emit(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn topics(args: &TopicArgs, candidates: Option<&[usize]>, report: Option<&Path>) -> Result<()> {
    let mut cfg = args.common.load()?;
    args.lda.apply(&mut cfg.lda);
    let raw = read_examples("train", &args.train, None)?;
    let vocab = if args.vocab.exists() {
        load_vocab(&args.vocab)?
    } else {
        let v = build_vocab(&raw, cfg.data.min_count)?;
        save_vocab(&args.vocab, &v)?;
        v
    };
    let stopwords = load_stopwords(args.stopwords.as_deref())?;
    let train = encode_training(&raw, &vocab)?;
    let docs = lda_documents(&train, &vocab, &stopwords);
    let model = match candidates {
        None => train_gibbs(&docs, vocab.len(), &cfg.lda)?,
        Some(c) => {
            let (sel, model) = select_k(&docs, vocab.len(), c, &cfg.lda)?;
            eprintln!("selected K={}", sel.best_k);
            if let Some(p) = report {
                write_json(p, &sel)?;
            }
            model
        }
    };
    model.save(&args.out, &vocab.hash())?;
    if let (Some(labels), Some(out)) = (&args.labels, &args.topic_map_out) {
        require("labels", labels)?;
        let labels: SynthLabels = read_json(labels)?;
        write_json(out, &align_topics(&model, &vocab, &labels.topic_vocab))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthCorpus {
            common,
            out_dir,
            k_true,
            vocab_per_topic,
            n_docs,
            doc_len,
            summary_len,
            concentration,
            test_docs,
        } => {
            let cfg = common.load()?;
            let mut s = cfg.data.synth.clone().unwrap_or_default();
            set(&mut s.k_true, k_true);
            set(&mut s.vocab_per_topic, vocab_per_topic);
            set(&mut s.n_docs, n_docs);
            set(&mut s.doc_len, doc_len);
            set(&mut s.summary_len, summary_len);
            set(&mut s.concentration, concentration);
            set(&mut s.seed, common.seed);
            let splits = synth_splits(&s, test_docs.unwrap_or(cfg.data.test_docs))?;
            std::fs::create_dir_all(&out_dir)?;
            write_jsonl(&out_dir.join("train.jsonl"), &splits.train)?;
            write_jsonl(&out_dir.join("test.jsonl"), &splits.test)?;
            write_json(&out_dir.join("labels.json"), &splits.labels)?;
            Ok(())
        }
        Command::TrainLda(args) => topics(&args, None, None),
        Command::SelectTopics {
            topic,
            candidates,
            report,
        } => topics(&topic, Some(&candidates), report.as_deref()),
        Command::TrainFfn {
            common,
            train,
            vocab,
            lda,
            out,
            stopwords,
            epochs,
            hidden,
            lr,
            batch_size,
        } => {
            let mut cfg = common.load()?;
            cfg.ffn.epochs = epochs;
            cfg.ffn.hidden = hidden;
            set(&mut cfg.ffn.lr, lr);
            set(&mut cfg.ffn.batch_size, batch_size);
            require("vocab", &vocab)?;
            let vocab = load_vocab(&vocab)?;
            let model = load_lda(&lda, &vocab.hash())?;
            let examples = encode_training(&read_examples("train", &train, None)?, &vocab)?;
            let sw = load_stopwords(stopwords.as_deref())?;
            let pairs = ffn_pairs(&examples, &model, &vocab, &sw, &model.config)?;
            let trained = train_ffn(&pairs, &cfg.ffn)?;
            eprintln!("final epoch loss {:.4}", trained.epoch_losses.last().unwrap_or(&f64::NAN));
            trained.weights.save(&out, &vocab.hash(), &cfg.ffn)
        }
        Command::TrainSummarizer {
            common,
            train,
            vocab,
            out,
            guidance,
            inputs,
            epochs,
            lr,
            batch_size,
            d_model,
            n_heads,
            layers,
            no_prompt,
        } => {
            let mut cfg = common.load()?;
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.lr, lr);
            set(&mut cfg.train.batch_size, batch_size);
            set(&mut cfg.model.d_model, d_model);
            set(&mut cfg.model.n_heads, n_heads);
            set(&mut cfg.model.n_encoder_layers, layers);
            set(&mut cfg.model.n_decoder_layers, layers);
            cfg.train.use_prompt &= !no_prompt;
            require("vocab", &vocab)?;
            let vocab = load_vocab(&vocab)?;
            let raw = read_examples("train", &train, inputs.topic_map.as_deref())?;
            let examples = encode_training(&raw, &vocab)?;
            let mode = guidance.mode();
            let gv = match mode {
                Some(m) => Guidance::load(&inputs, m, &vocab.hash())?.for_examples(&examples, &vocab, m)?,
                None => vec![None; examples.len()],
            };
            let model_cfg = ModelConfig {
                vocab_size: vocab.len(),
                topical_attention: mode.is_some(),
                ..cfg.model.clone()
            };
            let trained = train_summarizer(&examples, &gv, &model_cfg, &cfg.train, Some(&out), &vocab.hash())?;
            for e in &trained.epochs {
                eprintln!("epoch {}: loss {:.4}", e.epoch, e.train_loss);
            }
            trained
                .weights
                .save(&out.join("model.ckpt"), &vocab.hash(), cfg.train.seed, cfg.train.epochs)
        }
        Command::Generate {
            common,
            test,
            vocab,
            model,
            out,
            guidance,
            inputs,
            beam,
            length_penalty,
            max_len,
            min_len,
            no_repeat_ngram,
            early_stopping,
            no_early_stopping,
            no_prompt,
        } => {
            let mut cfg = common.load()?;
            let d = &mut cfg.decode;
            set(&mut d.beam_size, beam);
            set(&mut d.length_penalty, length_penalty);
            set(&mut d.max_length, max_len);
            set(&mut d.min_length, min_len);
            set(&mut d.no_repeat_ngram, no_repeat_ngram);
            if early_stopping {
                d.early_stopping = true;
            }
            if no_early_stopping {
                d.early_stopping = false;
            }
            d.validate()?;
            require("vocab", &vocab)?;
            let vocab = load_vocab(&vocab)?;
            require("model", &model)?;
            let (weights, meta) = ModelWeights::load(&model)?;
            if meta.vocab_hash != vocab.hash() {
                return Err(Error::InvalidArgument("model was trained with a different vocabulary".into()));
            }
            let raw = read_examples("test", &test, inputs.topic_map.as_deref())?;
            let examples: Vec<Example> = raw.iter().map(|r| r.encode(&vocab)).collect::<Result<_>>()?;
            let mode = match guidance {
                Some(g) => g.mode(),
                None if weights.config.topical_attention => Some(GuidanceMode::Controlled),
                None => None,
            };
            if mode == Some(GuidanceMode::LdaTarget) {
                return Err(Error::InvalidArgument(
                    "lda-target guidance reads the reference summary; use ffn or controlled".into(),
                ));
            }
            let gv = match mode {
                Some(m) => Guidance::load(&inputs, m, &vocab.hash())?.for_examples(&examples, &vocab, m)?,
                None => vec![None; examples.len()],
            };
            let use_prompt = cfg.train.use_prompt && !no_prompt;
            let gens = generate(&weights, &examples, &gv, &vocab, &cfg.decode, use_prompt)?;
            write_jsonl(&out, &gens)
        }
        Command::Evaluate {
            common,
            generated,
            reference,
            vocab,
            lda,
            topic_map,
            stopwords,
            out,
        } => {
            let cfg = common.load()?;
            require("vocab", &vocab)?;
            let vocab = load_vocab(&vocab)?;
            let model = load_lda(&lda, &vocab.hash())?;
            require("generated", &generated)?;
            let gens: Vec<Generation> = std::fs::read_to_string(&generated)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<_, _>>()?;
            let refs = read_examples("reference", &reference, topic_map.as_deref())?;
            let sw = load_stopwords(stopwords.as_deref())?;
            let mut report = evaluate(&gens, &refs, &vocab, &model, &sw, &model.config)?;
            if common.config.is_some() {
                report.config_hash = Some(cfg.hash());
                report.seed = cfg.seed;
            }
            emit(out.as_deref(), &report)
        }
        Command::Compare { a, b, out } => {
            require("a", &a)?;
            require("b", &b)?;
            let a: EvalReport = read_json(&a)?;
            let b: EvalReport = read_json(&b)?;
            emit(out.as_deref(), &compare(&a, &b)?)
        }
        Command::Pipeline { config, seed, out_dir } => {
            require("config", &config)?;
            let mut cfg = RunConfig::load(&config)?;
            if seed.is_some() {
                cfg.seed = seed;
            }
            set(&mut cfg.output_dir, out_dir);
            let manifest = run_pipeline(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&manifest.comparisons)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let name = command_name(&cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {}", e.in_stage(name));
            ExitCode::from(2)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SynthCorpus { .. } => "synth-corpus",
        Command::TrainLda(_) => "train-lda",
        Command::SelectTopics { .. } => "select-topics",
        Command::TrainFfn { .. } => "train-ffn",
        Command::TrainSummarizer { .. } => "train-summarizer",
        Command::Generate { .. } => "generate",
        Command::Evaluate { .. } => "evaluate",
        Command::Compare { .. } => "compare",
        Command::Pipeline { .. } => "pipeline",
    }
}
