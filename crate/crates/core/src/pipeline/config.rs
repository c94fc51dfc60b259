use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SynthConfig;
use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::guidance::{FfnConfig, GuidanceMode};
use crate::lda::LdaConfig;
use crate::model::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL training set; ignored when `synth` is set.
    pub train: Option<PathBuf>,
    /// JSONL test set; ignored when `synth` is set.
    pub test: Option<PathBuf>,
    /// Generate the corpus instead of reading it.
    pub synth: Option<SynthConfig>,
    /// Synthetic documents held out for testing (both examples of each).
    pub test_docs: usize,
    /// Newline-separated stopword file; the built-in list when absent.
    pub stopwords: Option<PathBuf>,
    pub min_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            synth: None,
            test_docs: 20,
            stopwords: None,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Guidance used while training the topical summarizer.
    pub train_mode: GuidanceMode,
    /// Guidance modes evaluated for the topical summarizer.
    pub eval_modes: Vec<GuidanceMode>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            train_mode: GuidanceMode::LdaTarget,
            eval_modes: vec![GuidanceMode::Controlled, GuidanceMode::Ffn],
        }
    }
}

/// One JSON document configuring a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every section's seed when set.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub lda: LdaConfig,
    /// Non-empty: choose K among these instead of using `lda.k`.
    pub topic_candidates: Vec<usize>,
    pub ffn: FfnConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub guidance: GuidanceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            lda: LdaConfig::default(),
            topic_candidates: Vec::new(),
            ffn: FfnConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            guidance: GuidanceConfig::default(),
        }
    }
}

fn config_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        msg: msg.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Copy with the master seed pushed into every section.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        if let Some(seed) = cfg.seed {
            if let Some(s) = cfg.data.synth.as_mut() {
                s.seed = seed;
            }
            cfg.lda.seed = seed;
            cfg.ffn.seed = seed;
            cfg.train.seed = seed;
        }
        cfg
    }

    /// Checks value ranges and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        if self.data.synth.is_none() {
            for (field, path) in [("data.train", &self.data.train), ("data.test", &self.data.test)] {
                match path {
                    None => return Err(config_err(field, "required unless data.synth is set")),
                    Some(p) if !p.exists() => {
                        return Err(config_err(field, format!("{} does not exist", p.display())))
                    }
                    _ => {}
                }
            }
        }
        if let Some(s) = &self.data.synth {
            s.validate()?;
            if self.data.test_docs == 0 || self.data.test_docs >= s.n_docs {
                return Err(config_err("data.test_docs", "must lie in 1..synth.n_docs"));
            }
        }
        if let Some(p) = &self.data.stopwords {
            if !p.exists() {
                return Err(config_err("data.stopwords", format!("{} does not exist", p.display())));
            }
        }
        if self.data.min_count == 0 {
            return Err(config_err("data.min_count", "must be at least 1"));
        }
        if self.topic_candidates.is_empty() {
            self.lda.validate()?;
        } else if self.topic_candidates.iter().any(|&k| k < 1) {
            return Err(config_err("topic_candidates", "every K must be at least 1"));
        }
        if self.train.epochs == 0 {
            return Err(config_err("train.epochs", "must be at least 1"));
        }
        if self.guidance.eval_modes.contains(&GuidanceMode::LdaTarget) {
            return Err(config_err(
                "guidance.eval_modes",
                "lda-target reads the reference summary and cannot be used for generation",
            ));
        }
        self.decode.validate()
    }

    /// SHA-256 of the resolved config, output directory excluded.
    pub fn hash(&self) -> String {
        let mut cfg = self.resolved();
        cfg.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&cfg).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }
}
