use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tensorlab::checkpoint::{load_optimizer, load_params, save_optimizer, save_params};
use tensorlab::{NoamAdam, ParamStore};

use crate::herosumm::{HeroSumm, ModelConfig};
use crate::textcore::Vocabulary;
use crate::{Error, Result};

const MODEL: &str = "model.json";
const VOCAB: &str = "vocab.txt";
const PARAMS: (&str, &str) = ("params.bin", "params.json");
const OPTIM: (&str, &str) = ("optim.bin", "optim.json");
const STATE: &str = "state.json";

/// One validation point of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    /// Mean training loss per target token since the previous record.
    pub train_loss: f64,
    /// Teacher-forced loss per target token on the validation set.
    pub val_loss: Option<f64>,
    /// Mean ROUGE-L F1 of greedy validation decodes.
    pub rouge_l: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub best_step: Option<u64>,
    pub best_rouge_l: Option<f64>,
    pub history: Vec<ValidationRecord>,
}

/// A trained model with its vocabulary.
pub struct Checkpoint {
    pub model: HeroSumm,
    pub store: ParamStore<f32>,
    pub vocab: Vocabulary,
}

impl Checkpoint {
    /// A freshly initialized model.
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::invalid(format!(
                "model vocab_size {} but vocabulary holds {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        let (model, store) = HeroSumm::build(config, seed)?;
        Ok(Checkpoint { model, store, vocab })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = ModelConfig::load(&dir.join(MODEL))?;
        let vocab = Vocabulary::load(&dir.join(VOCAB))?;
        let mut ckpt = Checkpoint::init(config, vocab, 0)?;
        load_params(&mut ckpt.store, &dir.join(PARAMS.0), &dir.join(PARAMS.1))
            .map_err(|e| Error::invalid(format!("{}: {e}", dir.display())))?;
        Ok(ckpt)
    }

    /// Writes into a sibling temporary directory, then swaps it in.
    pub fn save(&self, dir: &Path, optimizer: Option<&NoamAdam<f32>>, state: &TrainState) -> Result<()> {
        let tmp = sibling(dir, "tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        self.model.config.save(&tmp.join(MODEL))?;
        self.vocab.save(&tmp.join(VOCAB))?;
        save_params(&self.store, &tmp.join(PARAMS.0), &tmp.join(PARAMS.1))?;
        if let Some(opt) = optimizer {
            save_optimizer(opt, &self.store, &tmp.join(OPTIM.0), &tmp.join(OPTIM.1))?;
        }
        let state_path = tmp.join(STATE);
        fs::write(&state_path, serde_json::to_string_pretty(state)?).map_err(|e| Error::io(&state_path, e))?;
        if dir.exists() {
            let old = sibling(dir, "old");
            if old.exists() {
                fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
            }
            fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
            fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        } else {
            fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(())
    }

    pub fn load_optimizer(&self, dir: &Path) -> Result<NoamAdam<f32>> {
        load_optimizer(&self.store, &dir.join(OPTIM.0), &dir.join(OPTIM.1))
            .map_err(|e| Error::invalid(format!("{}: {e}", dir.display())))
    }
}

pub fn load_state(dir: &Path) -> Result<TrainState> {
    let path = dir.join(STATE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{suffix}"));
    dir.with_file_name(name)
}
