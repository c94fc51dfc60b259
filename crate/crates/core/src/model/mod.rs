//! Small pre-layer-norm encoder-decoder transformer whose decoder
//! cross-attention can be averaged with a per-source topical distribution.

mod attention;
mod train;

pub use attention::{
    attention_weights, cross_attention, guidance_distribution, topical_cross_attention,
    topical_with_distribution, Attention,
};
pub use train::{train_summarizer, EpochMetrics, TrainConfig, TrainedSummarizer};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::{Example, BOS, EOS, PAD, SEP};
use crate::error::{Error, Result};
use crate::guidance::GuidanceVector;
use crate::numerics::{log_softmax, Graph, Mask, ParamSet, Targets, Tensor, Var};

const LN_EPS: f64 = 1e-5;
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ffn_width: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub topical_attention: bool,
    /// Decoder layers using topical cross-attention; `None` means all.
    pub topical_layers: Option<Vec<usize>>,
    /// Heads using topical cross-attention; `None` means all.
    pub topical_heads: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ffn_width: 256,
            max_positions: 256,
            vocab_size: 0,
            topical_attention: true,
            topical_layers: None,
            topical_heads: None,
        }
    }
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, msg: String| Err(Error::Config { field: field.to_string(), msg });
        for (field, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_encoder_layers", self.n_encoder_layers),
            ("n_decoder_layers", self.n_decoder_layers),
            ("ffn_width", self.ffn_width),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return bad(field, "must be positive".into());
            }
        }
        if self.d_model % self.n_heads != 0 {
            return bad(
                "n_heads",
                format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads),
            );
        }
        if let Some(l) = self.topical_layers.iter().flatten().find(|&&l| l >= self.n_decoder_layers) {
            return bad("topical_layers", format!("layer {l} does not exist"));
        }
        if let Some(h) = self.topical_heads.iter().flatten().find(|&&h| h >= self.n_heads) {
            return bad("topical_heads", format!("head {h} does not exist"));
        }
        Ok(())
    }

    /// Whether head `head` of decoder layer `layer` averages in the guidance.
    pub fn is_topical(&self, layer: usize, head: usize) -> bool {
        self.topical_attention
            && self.topical_layers.as_ref().is_none_or(|ls| ls.contains(&layer))
            && self.topical_heads.as_ref().is_none_or(|hs| hs.contains(&head))
    }
}

/// Sinusoidal position table, `max_positions × d_model`.
pub fn sinusoid_table(max_positions: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; max_positions * d_model];
    for pos in 0..max_positions {
        for i in 0..d_model {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d_model as f64);
            let angle = pos as f64 / rate;
            data[pos * d_model + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(max_positions, d_model, data).expect("sized")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub params: ParamSet,
    positions: Tensor,
}

/// Header stored with a summarizer checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub seed: u64,
    pub epoch: usize,
}

impl ModelWeights {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f) = (config.d_model, config.ffn_width);
        let depth = (2 * (config.n_encoder_layers + config.n_decoder_layers)) as f64;
        let mut p = ParamSet::new();
        let mut dense = |p: &mut ParamSet, name: String, fan_in: usize, fan_out: usize, shrink: bool| {
            let mut std = 1.0 / (fan_in as f64).sqrt();
            if shrink {
                std /= depth.sqrt();
            }
            p.insert(name, Tensor::randn(&[fan_in, fan_out], std, &mut rng));
        };
        let norm = |p: &mut ParamSet, name: &str| {
            p.insert(format!("{name}.g"), Tensor::full(&[d], 1.0));
            p.insert(format!("{name}.b"), Tensor::zeros(&[d]));
        };

        let mut embed_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e1b0);
        p.insert("embed", Tensor::randn(&[config.vocab_size, d], 0.05, &mut embed_rng));
        p.insert("out_bias", Tensor::zeros(&[config.vocab_size]));

        let attn = |p: &mut ParamSet, prefix: &str, dense: &mut dyn FnMut(&mut ParamSet, String, usize, usize, bool)| {
            for w in ["wq", "wk", "wv"] {
                dense(p, format!("{prefix}.{w}"), d, d, false);
            }
            dense(p, format!("{prefix}.wo"), d, d, true);
        };
        let ffn = |p: &mut ParamSet, prefix: &str, dense: &mut dyn FnMut(&mut ParamSet, String, usize, usize, bool)| {
            dense(p, format!("{prefix}.w1"), d, f, false);
            p.insert(format!("{prefix}.b1"), Tensor::zeros(&[f]));
            dense(p, format!("{prefix}.w2"), f, d, true);
            p.insert(format!("{prefix}.b2"), Tensor::zeros(&[d]));
        };

        for l in 0..config.n_encoder_layers {
            norm(&mut p, &format!("enc.{l}.ln1"));
            attn(&mut p, &format!("enc.{l}.self"), &mut dense);
            norm(&mut p, &format!("enc.{l}.ln2"));
            ffn(&mut p, &format!("enc.{l}.ffn"), &mut dense);
        }
        norm(&mut p, "enc.ln");
        for l in 0..config.n_decoder_layers {
            norm(&mut p, &format!("dec.{l}.ln1"));
            attn(&mut p, &format!("dec.{l}.self"), &mut dense);
            norm(&mut p, &format!("dec.{l}.ln2"));
            attn(&mut p, &format!("dec.{l}.cross"), &mut dense);
            norm(&mut p, &format!("dec.{l}.ln3"));
            ffn(&mut p, &format!("dec.{l}.ffn"), &mut dense);
        }
        norm(&mut p, "dec.ln");

        Ok(Self {
            config: config.clone(),
            params: p,
            positions: sinusoid_table(config.max_positions, d),
        })
    }

    /// Places every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn save(&self, path: &Path, vocab_hash: &str, seed: u64, epoch: usize) -> Result<()> {
        let meta = CheckpointMeta {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            vocab_hash: vocab_hash.to_string(),
            seed,
            epoch,
        };
        checkpoint::save(path, "model", &meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (meta, params): (CheckpointMeta, ParamSet) = checkpoint::load(path, "model")?;
        if meta.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported model format {}",
                meta.format_version
            )));
        }
        let reference = Self::init(&meta.config, 0)?;
        if params.len() != reference.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors, expected {}",
                params.len(),
                reference.params.len()
            )));
        }
        for ((name, want), (got_name, got)) in reference.params.iter().zip(params.iter()) {
            if name != got_name || want.shape() != got.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{got_name}` {:?} does not match `{name}` {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok((
            Self {
                params,
                positions: reference.positions,
                config: meta.config.clone(),
            },
            meta,
        ))
    }

    /// Encoder states (`len × d_model`) for one id sequence.
    pub fn encode(&self, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let out = Net::new(self, &vars).encode(&mut g, ids)?;
        Ok(g.value(out).clone())
    }

    /// Encoder states for every row of a batch.
    pub fn encode_batch(&self, batch: &Batch) -> Result<Vec<Tensor>> {
        batch.encoder_ids.iter().map(|ids| self.encode(ids)).collect()
    }

    /// Mean teacher-forced loss without recording gradients.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let out = forward_teacher_forced(&mut g, self, &vars, batch)?;
        Ok(g.value(out.loss).item())
    }

    /// Frozen encoder output plus guidance, ready for step-wise decoding.
    pub fn prepare(&self, encoder_ids: &[usize], guidance: Option<&GuidanceVector>) -> Result<Prepared<'_>> {
        let pad: Vec<bool> = encoder_ids.iter().map(|&t| t == PAD).collect();
        let dist = match (self.config.topical_attention, guidance) {
            (true, Some(gv)) => Some(guidance_distribution(gv, &pad)?),
            (true, None) => return Err(Error::invalid("topical attention needs guidance")),
            (false, _) => None,
        };
        Ok(Prepared {
            weights: self,
            encoded: self.encode(encoder_ids)?,
            pad,
            dist,
        })
    }
}

/// Encoded source for incremental decoding.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    weights: &'a ModelWeights,
    encoded: Tensor,
    pad: Vec<bool>,
    dist: Option<Vec<f64>>,
}

impl Prepared<'_> {
    /// Log-probabilities of the token following `prefix` (which starts with BOS).
    pub fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.weights.bind(&mut g, false);
        let enc = g.constant(self.encoded.clone());
        let net = Net::new(self.weights, &vars);
        let logits = net.decode(&mut g, enc, &self.pad, self.dist.as_deref(), prefix)?;
        let last = g.value(logits).row(prefix.len() - 1).to_vec();
        Ok(log_softmax(&Tensor::vector(last))?.into_data())
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.config.vocab_size
    }
}

/// Parameter lookup bound to one graph.
struct Net<'a> {
    w: &'a ModelWeights,
    vars: &'a [Var],
}

impl<'a> Net<'a> {
    fn new(w: &'a ModelWeights, vars: &'a [Var]) -> Self {
        Self { w, vars }
    }

    fn p(&self, name: &str) -> Var {
        let i = self
            .w
            .params
            .position(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing"));
        self.vars[i]
    }

    fn norm(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let n = g.layer_norm(x, LN_EPS);
        let n = g.mul_row(n, self.p(&format!("{name}.g")))?;
        g.add_row(n, self.p(&format!("{name}.b")))
    }

    fn ffn(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let h = g.matmul(x, self.p(&format!("{prefix}.w1")))?;
        let h = g.add_row(h, self.p(&format!("{prefix}.b1")))?;
        let h = g.gelu(h);
        let o = g.matmul(h, self.p(&format!("{prefix}.w2")))?;
        g.add_row(o, self.p(&format!("{prefix}.b2")))
    }

    fn embed(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let cfg = &self.w.config;
        if ids.len() > cfg.max_positions {
            return Err(Error::Overlength {
                len: ids.len(),
                max: cfg.max_positions,
            });
        }
        if ids.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::shape(
                "embed",
                format!("token {bad} outside vocabulary of {}", cfg.vocab_size),
            ));
        }
        let d = cfg.d_model;
        let e = g.gather(self.p("embed"), ids)?;
        let e = g.scale(e, (d as f64).sqrt());
        let pos = Tensor::matrix(ids.len(), d, self.w.positions.data()[..ids.len() * d].to_vec())?;
        let pos = g.constant(pos);
        g.add(e, pos)
    }

    fn project(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<[Var; 3]> {
        Ok([
            g.matmul(x, self.p(&format!("{prefix}.wq")))?,
            g.matmul(x, self.p(&format!("{prefix}.wk")))?,
            g.matmul(x, self.p(&format!("{prefix}.wv")))?,
        ])
    }

    fn self_attention(&self, g: &mut Graph, x: Var, prefix: &str, mask: &Mask) -> Result<Var> {
        let [q, k, v] = self.project(g, x, prefix)?;
        let dk = self.w.config.d_k();
        let mut heads = Vec::with_capacity(self.w.config.n_heads);
        for h in 0..self.w.config.n_heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let a = attention_weights(g, qh, kh, Some(mask))?;
            heads.push(g.matmul(a, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        g.matmul(cat, self.p(&format!("{prefix}.wo")))
    }

    fn cross(
        &self,
        g: &mut Graph,
        x: Var,
        enc: Var,
        layer: usize,
        pad: &[bool],
        dist: Option<&[f64]>,
    ) -> Result<Var> {
        let prefix = format!("dec.{layer}.cross");
        let q = g.matmul(x, self.p(&format!("{prefix}.wq")))?;
        let k = g.matmul(enc, self.p(&format!("{prefix}.wk")))?;
        let v = g.matmul(enc, self.p(&format!("{prefix}.wv")))?;
        let dk = self.w.config.d_k();
        let mut heads = Vec::with_capacity(self.w.config.n_heads);
        for h in 0..self.w.config.n_heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let att = match dist {
                Some(d) if self.w.config.is_topical(layer, h) => {
                    attention::topical_with_distribution(g, qh, kh, vh, d, pad)?
                }
                _ => cross_attention(g, qh, kh, vh, pad)?,
            };
            heads.push(att.context);
        }
        let cat = g.concat_cols(&heads)?;
        g.matmul(cat, self.p(&format!("{prefix}.wo")))
    }

    fn encode(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let pad: Vec<bool> = ids.iter().map(|&t| t == PAD).collect();
        let mask = Mask::Cols(pad);
        let mut x = self.embed(g, ids)?;
        for l in 0..self.w.config.n_encoder_layers {
            let h = self.norm(g, x, &format!("enc.{l}.ln1"))?;
            let a = self.self_attention(g, h, &format!("enc.{l}.self"), &mask)?;
            x = g.add(x, a)?;
            let h = self.norm(g, x, &format!("enc.{l}.ln2"))?;
            let f = self.ffn(g, h, &format!("enc.{l}.ffn"))?;
            x = g.add(x, f)?;
        }
        self.norm(g, x, "enc.ln")
    }

    /// Logits (`len × vocab`) for every decoder position.
    fn decode(
        &self,
        g: &mut Graph,
        enc: Var,
        pad: &[bool],
        dist: Option<&[f64]>,
        ids: &[usize],
    ) -> Result<Var> {
        let causal = Mask::Causal { offset: 0 };
        let mut x = self.embed(g, ids)?;
        for l in 0..self.w.config.n_decoder_layers {
            let h = self.norm(g, x, &format!("dec.{l}.ln1"))?;
            let a = self.self_attention(g, h, &format!("dec.{l}.self"), &causal)?;
            x = g.add(x, a)?;
            let h = self.norm(g, x, &format!("dec.{l}.ln2"))?;
            let c = self.cross(g, h, enc, l, pad, dist)?;
            x = g.add(x, c)?;
            let h = self.norm(g, x, &format!("dec.{l}.ln3"))?;
            let f = self.ffn(g, h, &format!("dec.{l}.ffn"))?;
            x = g.add(x, f)?;
        }
        let x = self.norm(g, x, "dec.ln")?;
        let logits = g.matmul_nt(x, self.p("embed"))?;
        g.add_row(logits, self.p("out_bias"))
    }
}

/// Encoder input for an example: `prompt SEP source` when prompting, else
/// the source. Returns the ids and the length of the prompt prefix.
pub fn encoder_input(example: &Example, use_prompt: bool) -> (Vec<usize>, usize) {
    match (&example.topic_prompt, use_prompt) {
        (Some(prompt), true) if !prompt.is_empty() => {
            let mut ids = prompt.clone();
            ids.push(SEP);
            let n = ids.len();
            ids.extend_from_slice(&example.source);
            (ids, n)
        }
        _ => (example.source.clone(), 0),
    }
}

/// Padded teacher-forcing batch. Rows are independent; PAD marks padding in
/// every sequence and PAD targets are ignored by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub encoder_ids: Vec<Vec<usize>>,
    pub decoder_inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    /// Aligned to `encoder_ids`, prompt positions included.
    pub guidance: Vec<Option<GuidanceVector>>,
}

impl Batch {
    /// `guidance[i]` is aligned to example `i`'s source; prompt positions are
    /// prepended with the out-of-vocabulary score.
    pub fn from_examples(
        examples: &[&Example],
        guidance: &[Option<GuidanceVector>],
        use_prompt: bool,
    ) -> Result<Self> {
        if examples.len() != guidance.len() {
            return Err(Error::shape(
                "Batch",
                format!("{} examples, {} guidance vectors", examples.len(), guidance.len()),
            ));
        }
        if examples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        let mut tgt = Vec::new();
        let mut guid = Vec::new();
        for (ex, gv) in examples.iter().zip(guidance) {
            let (ids, prefix) = encoder_input(ex, use_prompt);
            let gv = match gv {
                Some(gv) if gv.len() != ex.source.len() => {
                    return Err(Error::shape(
                        "Batch",
                        format!(
                            "guidance of length {} for source of {} in `{}`",
                            gv.len(),
                            ex.source.len(),
                            ex.id
                        ),
                    ))
                }
                Some(gv) => Some(gv.clone().with_prefix(prefix)),
                None => None,
            };
            let mut d = vec![BOS];
            d.extend_from_slice(&ex.summary);
            let mut t = ex.summary.clone();
            t.push(EOS);
            enc.push(ids);
            dec.push(d);
            tgt.push(t);
            guid.push(gv);
        }
        let enc_len = enc.iter().map(Vec::len).max().unwrap_or(0);
        let dec_len = dec.iter().map(Vec::len).max().unwrap_or(0);
        for row in &mut enc {
            row.resize(enc_len, PAD);
        }
        for (d, t) in dec.iter_mut().zip(&mut tgt) {
            d.resize(dec_len, PAD);
            t.resize(dec_len, PAD);
        }
        for gv in guid.iter_mut().flatten() {
            let n = enc_len - gv.len();
            gv.scores.extend(std::iter::repeat_n(0.0, n));
            gv.mask.extend(std::iter::repeat_n(true, n));
        }
        Ok(Self {
            ids: examples.iter().map(|e| e.id.clone()).collect(),
            encoder_ids: enc,
            decoder_inputs: dec,
            targets: tgt,
            guidance: guid,
        })
    }

    pub fn len(&self) -> usize {
        self.encoder_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoder_ids.is_empty()
    }

    /// Number of non-PAD targets.
    pub fn num_targets(&self) -> usize {
        self.targets.iter().flatten().filter(|&&t| t != PAD).count()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<Var>,
    /// Mean cross-entropy over non-PAD targets of the whole batch.
    pub loss: Var,
}

/// Teacher-forced forward pass using parameters bound by [`ModelWeights::bind`].
pub fn forward_teacher_forced(
    g: &mut Graph,
    weights: &ModelWeights,
    vars: &[Var],
    batch: &Batch,
) -> Result<ForwardOutput> {
    let net = Net::new(weights, vars);
    let total = batch.num_targets();
    if total == 0 {
        return Err(Error::invalid("batch has no targets"));
    }
    let mut logits = Vec::with_capacity(batch.len());
    let mut loss: Option<Var> = None;
    for i in 0..batch.len() {
        let src = &batch.encoder_ids[i];
        let (dec_in, tgt) = (&batch.decoder_inputs[i], &batch.targets[i]);
        if dec_in.len() != tgt.len() {
            return Err(Error::shape("forward_teacher_forced", "decoder input/target length"));
        }
        let pad: Vec<bool> = src.iter().map(|&t| t == PAD).collect();
        let dist = if weights.config.topical_attention {
            let gv = batch.guidance[i].as_ref().ok_or_else(|| {
                Error::invalid(format!("topical attention needs guidance (`{}`)", batch.ids[i]))
            })?;
            Some(guidance_distribution(gv, &pad)?)
        } else {
            None
        };
        let enc = net.encode(g, src)?;
        let lg = net.decode(g, enc, &pad, dist.as_deref(), dec_in)?;
        let active: Vec<Option<usize>> = tgt.iter().map(|&t| (t != PAD).then_some(t)).collect();
        let n = active.iter().flatten().count();
        if n > 0 {
            let ce = g.cross_entropy(lg, Targets::Index(active))?;
            let weighted = g.scale(ce, n as f64 / total as f64);
            loss = Some(match loss {
                Some(acc) => g.add(acc, weighted)?,
                None => weighted,
            });
        }
        logits.push(lg);
    }
    Ok(ForwardOutput {
        logits,
        loss: loss.expect("at least one target"),
    })
}
