use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::data::load_triplets;
use super::evaluate::{evaluate, EvalReport};
use super::train::train;
use super::{DecodeConfig, EvalMode, TrainConfig};
use crate::herosumm::{ModelConfig, Preset};
use crate::{Error, Result};

/// Where the transferred model comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    /// An existing checkpoint directory.
    Checkpoint(PathBuf),
    /// Triplet files to train on; several are interleaved.
    Files(Vec<PathBuf>),
}

impl Source {
    /// A checkpoint directory, or triplet files joined with `+`.
    pub fn parse(tag: &str) -> Result<Self> {
        let path = Path::new(tag);
        if path.join("model.json").is_file() {
            return Ok(Source::Checkpoint(path.into()));
        }
        let files: Vec<PathBuf> = tag.split('+').filter(|s| !s.is_empty()).map(PathBuf::from).collect();
        if files.is_empty() {
            return Err(Error::invalid("empty source tag"));
        }
        if let Some(missing) = files.iter().find(|f| !f.is_file()) {
            return Err(Error::invalid(format!(
                "source {} is neither a checkpoint directory nor a triplet file",
                missing.display()
            )));
        }
        Ok(Source::Files(files))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    /// Template for source training; files and directories are filled in.
    pub train: TrainConfig,
    pub finetune_steps: u64,
    pub finetune_max_doc_tokens: usize,
    pub finetune_max_summary_tokens: usize,
    pub decode: DecodeConfig,
}

impl TransferConfig {
    /// Desk-scale training with the long-output decode settings.
    pub fn desk(work_dir: &Path) -> Self {
        let model = ModelConfig {
            d_model: 64,
            ffn_hidden: 128,
            heads: 4,
            local_layers: 2,
            query_layers: 1,
            global_layers: 1,
            decoder_layers: 1,
            max_doc_tokens: 200,
            max_summary_tokens: 100,
            ..ModelConfig::preset(Preset::JointQuery, 20_000)
        };
        TransferConfig {
            train: TrainConfig {
                model,
                train: Vec::new(),
                val: None,
                max_val_examples: None,
                max_batch_tokens: 4000,
                accumulation: 2,
                steps: 300,
                validation_interval: 100,
                log_interval: 50,
                checkpoint_dir: work_dir.into(),
                seed: 0,
                finetune_from: None,
                resume: false,
                adam: Default::default(),
            },
            finetune_steps: 100,
            finetune_max_doc_tokens: 600,
            finetune_max_summary_tokens: 400,
            decode: DecodeConfig {
                beam: 15,
                alpha: 0.4,
                min_len: 400,
                max_len: 450,
                block_trigrams: true,
                max_doc_tokens: Some(800),
                max_docs: Some(25),
            },
        }
    }
}

/// Trains (or loads) on the source, optionally fine-tunes, then evaluates
/// in recall mode. Intermediate checkpoints go under `work_dir`.
pub fn transfer(
    source: &Source,
    eval: &Path,
    finetune: Option<&Path>,
    config: &TransferConfig,
    work_dir: &Path,
) -> Result<EvalReport> {
    let eval_set = load_triplets(eval)?;
    let mut ckpt_dir = match source {
        Source::Checkpoint(dir) => dir.clone(),
        Source::Files(files) => {
            info!("training on {} source file(s)", files.len());
            let c = TrainConfig {
                train: files.clone(),
                checkpoint_dir: work_dir.join("source"),
                finetune_from: None,
                ..config.train.clone()
            };
            train(&c)?.best
        }
    };
    if let Some(ft) = finetune {
        info!("fine-tuning on {}", ft.display());
        let base = Checkpoint::load(&ckpt_dir)?.model.config;
        let c = TrainConfig {
            model: ModelConfig {
                max_doc_tokens: config.finetune_max_doc_tokens,
                max_summary_tokens: config.finetune_max_summary_tokens,
                ..base
            },
            train: vec![ft.into()],
            val: None,
            steps: config.finetune_steps,
            checkpoint_dir: work_dir.join("finetune"),
            finetune_from: Some(ckpt_dir),
            resume: false,
            ..config.train.clone()
        };
        ckpt_dir = train(&c)?.best;
    }
    let ckpt = Checkpoint::load(&ckpt_dir)?;
    evaluate(&ckpt, &eval_set, &config.decode, EvalMode::Recall250)
}
