use std::path::PathBuf;

use log::{info, warn};
use tensorlab::{AdamConfig, NoamAdam, ParamStore, Real, Tape};

use super::checkpoint::{load_state, Checkpoint, TrainState, ValidationRecord};
use super::data::{build_vocab, derive_seed, encode_all, load_triplets, make_batch, pack, BatchStream};
use super::decode::{greedy, ModelScorer};
use super::{DecodeConfig, TrainConfig};
use crate::dataforge::Triplet;
use crate::herosumm::{Batch, EncodedExample, HeroSumm, ModelConfig};
use crate::rouge::rouge_l;
use crate::textcore::Vocabulary;
use crate::{Error, Result};

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub best: PathBuf,
    pub latest: PathBuf,
    /// Loss per target token of the last optimizer step.
    pub last_loss: f64,
}

/// One optimizer step over `micro` batches. The summed loss of all of them
/// is divided by their total target-token count, so splitting a batch into
/// micro-batches leaves the update unchanged. Returns the loss per token.
pub fn train_step<F: Real>(
    model: &HeroSumm,
    store: &mut ParamStore<F>,
    optimizer: &mut NoamAdam<F>,
    micro: &[Batch],
    dropout_seeds: &[u64],
    step: u64,
) -> Result<f64> {
    if micro.is_empty() || micro.len() != dropout_seeds.len() {
        return Err(Error::invalid("need one dropout seed per micro-batch"));
    }
    let tokens: usize = micro.iter().map(Batch::target_tokens).sum();
    store.zero_grad();
    let mut loss = 0.0;
    for (batch, &seed) in micro.iter().zip(dropout_seeds) {
        let mut t = Tape::train(seed);
        let out = model.forward(&mut t, store, batch, Some(tokens as f64))?;
        let value = t.scalar(out.loss).as_f64();
        if !value.is_finite() {
            return Err(Error::NumericalAbort {
                step,
                detail: format!("loss is {value}"),
            });
        }
        loss += value;
        t.backward(out.loss)?.accumulate_into(store);
    }
    optimizer.step(store).map_err(|e| Error::NumericalAbort {
        step,
        detail: e.to_string(),
    })?;
    Ok(loss)
}

/// Teacher-forced loss per target token.
pub fn mean_loss(ckpt: &Checkpoint, examples: &[EncodedExample], budget: usize) -> Result<f64> {
    let order: Vec<usize> = (0..examples.len()).collect();
    let (mut total, mut tokens) = (0.0, 0usize);
    for ids in pack(&order, examples, budget)? {
        let batch = make_batch(examples, &ids)?;
        let mut t = Tape::eval();
        let out = ckpt.model.forward(&mut t, &ckpt.store, &batch, Some(1.0))?;
        total += t.scalar(out.loss) as f64;
        tokens += batch.target_tokens();
    }
    Ok(total / tokens.max(1) as f64)
}

/// Mean ROUGE-L F1 of greedy decodes against the references.
pub fn greedy_rouge_l(ckpt: &Checkpoint, examples: &[EncodedExample], max_len: usize) -> Result<f64> {
    use rayon::prelude::*;
    let config = DecodeConfig::greedy(max_len);
    let scores: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let mut scorer = ModelScorer::new(&ckpt.model, &ckpt.store, ex)?;
            let hyp = greedy(&mut scorer, &config)?;
            let cand: Vec<String> = hyp.tokens.iter().map(u32::to_string).collect();
            let reference: Vec<String> = ex.summary.iter().map(u32::to_string).collect();
            Ok(rouge_l(&cand, &reference).f1)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

struct Data {
    sources: Vec<Vec<EncodedExample>>,
    val: Vec<EncodedExample>,
}

fn prepare(config: &TrainConfig, vocab: &Vocabulary, ckpt_config: &ModelConfig) -> Result<Data> {
    let mut sources = Vec::new();
    for path in &config.train {
        let triplets = load_triplets(path)?;
        sources.push(encode_all(&triplets, vocab, ckpt_config)?);
    }
    let mut val = match &config.val {
        Some(p) => encode_all(&load_triplets(p)?, vocab, ckpt_config)?,
        None => Vec::new(),
    };
    if let Some(n) = config.max_val_examples {
        val.truncate(n);
    }
    Ok(Data { sources, val })
}

fn initial_checkpoint(config: &TrainConfig) -> Result<Checkpoint> {
    if let Some(from) = &config.finetune_from {
        let loaded = Checkpoint::load(from)?;
        let model = ModelConfig {
            vocab_size: loaded.vocab.len(),
            ..config.model.clone()
        };
        let mut ckpt = Checkpoint::init(model, loaded.vocab.clone(), config.seed)?;
        if ckpt.store.len() != loaded.store.len() {
            return Err(Error::invalid("fine-tune model layout differs from the checkpoint"));
        }
        for (_, p) in ckpt.store.iter_mut() {
            let src = loaded.store.id(&p.name).map(|id| loaded.store.get(id));
            match src {
                Some(src) if src.shape == p.shape => p.value.clone_from(&src.value),
                _ => return Err(Error::invalid(format!("checkpoint has no tensor {} of shape {:?}", p.name, p.shape))),
            }
        }
        return Ok(ckpt);
    }
    let mut triplets: Vec<Triplet> = Vec::new();
    for path in &config.train {
        triplets.extend(load_triplets(path)?);
    }
    let vocab = build_vocab(&triplets, config.model.vocab_size)?;
    let model = ModelConfig {
        vocab_size: vocab.len(),
        ..config.model.clone()
    };
    Checkpoint::init(model, vocab, config.seed)
}

/// Trains per `config`, validating and checkpointing every
/// `validation_interval` steps and at the end. `best` holds the checkpoint
/// with the highest validation ROUGE-L (the latest one without a
/// validation set).
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let best_dir = config.checkpoint_dir.join("best");
    let latest_dir = config.checkpoint_dir.join("latest");
    std::fs::create_dir_all(&config.checkpoint_dir).map_err(|e| Error::io(&config.checkpoint_dir, e))?;

    let resuming = config.resume && latest_dir.join("state.json").exists();
    let (mut ckpt, mut optimizer, mut state) = if resuming {
        let ckpt = Checkpoint::load(&latest_dir)?;
        let opt = ckpt.load_optimizer(&latest_dir)?;
        let state = load_state(&latest_dir)?;
        info!("resuming from step {}", state.step);
        (ckpt, opt, state)
    } else {
        let ckpt = initial_checkpoint(config)?;
        let adam = AdamConfig {
            d_model: ckpt.model.config.d_model,
            ..config.adam.clone()
        };
        let opt = NoamAdam::new(adam, &ckpt.store);
        (ckpt, opt, TrainState::default())
    };

    let model_config = ckpt.model.config.clone();
    let data = prepare(config, &ckpt.vocab, &model_config)?;
    let mut stream = BatchStream::new(data.sources, config.max_batch_tokens, config.seed)?;
    let acc = config.accumulation as u64;
    stream.skip(state.step * acc)?;
    info!(
        "training {} examples, {} parameters, vocab {}",
        stream.examples().len(),
        ckpt.store.num_elements(),
        ckpt.vocab.len()
    );

    let mut window = (0.0, 0u64);
    let mut last_loss = f64::NAN;
    while state.step < config.steps {
        let first = state.step * acc;
        let micro: Vec<Batch> = (0..acc).map(|_| stream.next_batch()).collect::<Result<_>>()?;
        let seeds: Vec<u64> = (first..first + acc).map(|k| derive_seed(config.seed ^ 0xd80f, k)).collect();
        last_loss = train_step(&ckpt.model, &mut ckpt.store, &mut optimizer, &micro, &seeds, state.step + 1)?;
        state.step += 1;
        window.0 += last_loss;
        window.1 += 1;
        if state.step % config.log_interval == 0 {
            info!("step {} loss {:.4} lr {:.3e}", state.step, last_loss, optimizer.current_lr());
        }
        if state.step % config.validation_interval == 0 || state.step == config.steps {
            let mut record = ValidationRecord {
                step: state.step,
                train_loss: window.0 / window.1 as f64,
                val_loss: None,
                rouge_l: None,
            };
            window = (0.0, 0);
            if !data.val.is_empty() {
                record.val_loss = Some(mean_loss(&ckpt, &data.val, config.max_batch_tokens)?);
                let r = greedy_rouge_l(&ckpt, &data.val, model_config.max_summary_tokens)?;
                record.rouge_l = Some(r);
                if state.best_rouge_l.map_or(true, |b| r > b) {
                    state.best_rouge_l = Some(r);
                    state.best_step = Some(state.step);
                }
            } else {
                state.best_step = Some(state.step);
            }
            info!(
                "validation at step {}: train loss {:.4}, val loss {}, ROUGE-L {}",
                record.step,
                record.train_loss,
                record.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
                record.rouge_l.map_or("-".into(), |v| format!("{v:.4}")),
            );
            state.history.push(record);
            ckpt.save(&latest_dir, Some(&optimizer), &state)?;
            if state.best_step == Some(state.step) {
                ckpt.save(&best_dir, None, &state)?;
            }
        }
    }
    if !best_dir.exists() {
        warn!("no validation point reached; best checkpoint is the latest state");
        ckpt.save(&latest_dir, Some(&optimizer), &state)?;
        ckpt.save(&best_dir, None, &state)?;
    }
    Ok(TrainOutcome {
        state,
        best: best_dir,
        latest: latest_dir,
        last_loss,
    })
}
