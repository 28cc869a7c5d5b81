use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tensorlab::AdamConfig;

use crate::herosumm::ModelConfig;
use crate::{Error, Result};

fn default_batch_tokens() -> usize {
    4000
}
fn default_accumulation() -> usize {
    2
}
fn default_interval() -> u64 {
    1000
}
fn default_log_interval() -> u64 {
    100
}

/// Everything `train` needs. Relative paths in a loaded file resolve
/// against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Model layout. `vocab_size` caps the vocabulary built from the
    /// training files and is replaced by its actual size.
    pub model: ModelConfig,
    /// Training triplet files; two or more are interleaved one-to-one.
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub val: Option<PathBuf>,
    /// Validation examples decoded per check (all when absent).
    #[serde(default)]
    pub max_val_examples: Option<usize>,
    #[serde(default = "default_batch_tokens")]
    pub max_batch_tokens: usize,
    #[serde(default = "default_accumulation")]
    pub accumulation: usize,
    pub steps: u64,
    #[serde(default = "default_interval")]
    pub validation_interval: u64,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    pub checkpoint_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Start from this checkpoint's parameters and vocabulary.
    #[serde(default)]
    pub finetune_from: Option<PathBuf>,
    /// Continue from `checkpoint_dir/latest` when it exists.
    #[serde(default)]
    pub resume: bool,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.accumulation == 0 {
            return Err(Error::invalid("accumulation must be at least 1"));
        }
        if self.max_batch_tokens == 0 {
            return Err(Error::invalid("max_batch_tokens must be positive"));
        }
        if self.validation_interval == 0 {
            return Err(Error::invalid("validation_interval must be positive"));
        }
        if self.train.is_empty() {
            return Err(Error::invalid("no training files"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.train.iter_mut().for_each(fix);
        config.val.as_mut().map(fix);
        fix(&mut config.checkpoint_dir);
        config.finetune_from.as_mut().map(fix);
        config.validate()?;
        Ok(config)
    }
}

/// Beam-search settings. The truncation fields override the model's limits
/// when encoding inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam: usize,
    pub alpha: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub block_trigrams: bool,
    #[serde(default)]
    pub max_doc_tokens: Option<usize>,
    #[serde(default)]
    pub max_docs: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 5,
            alpha: 0.4,
            min_len: 0,
            max_len: 100,
            block_trigrams: true,
            max_doc_tokens: None,
            max_docs: None,
        }
    }
}

impl DecodeConfig {
    /// Plain argmax decoding up to `max_len`.
    pub fn greedy(max_len: usize) -> Self {
        DecodeConfig {
            beam: 1,
            alpha: 0.0,
            min_len: 0,
            max_len,
            block_trigrams: false,
            max_doc_tokens: None,
            max_docs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::invalid("beam must be at least 1"));
        }
        if self.min_len > self.max_len {
            return Err(Error::invalid(format!("min_len {} exceeds max_len {}", self.min_len, self.max_len)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(())
    }

    /// `model` with the input limits replaced by the overrides.
    pub fn input_limits(&self, model: &ModelConfig) -> ModelConfig {
        ModelConfig {
            max_doc_tokens: self.max_doc_tokens.unwrap_or(model.max_doc_tokens),
            max_docs: self.max_docs.unwrap_or(model.max_docs),
            ..model.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// ROUGE-1/2/L F1 of the full output.
    F1,
    /// ROUGE-1/2/L/SU4 recall of the first 250 output tokens.
    Recall250,
}

impl EvalMode {
    pub const RECALL_WORD_LIMIT: usize = 250;
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::F1 => "f1",
            EvalMode::Recall250 => "recall250",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(EvalMode::F1),
            "recall250" | "recall-250" => Ok(EvalMode::Recall250),
            _ => Err(Error::invalid(format!("unknown evaluation mode {s:?}"))),
        }
    }
}
