use std::collections::HashSet;

use tensorlab::{ParamStore, Real, Tape};

use super::DecodeConfig;
use crate::herosumm::{Batch, EncodedExample, HeroSumm};
use crate::textcore::{BOS, EOS, PAD, SEP};
use crate::{Error, Result};

/// Next-token log-probabilities for a set of prefixes.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;

    /// One row of `vocab_size` log-probabilities per prefix. Every prefix
    /// starts with the start marker.
    fn score(&mut self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>>;
}

/// Scores prefixes with a model against one encoded example.
pub struct ModelScorer<'a, F: Real> {
    model: &'a HeroSumm,
    store: &'a ParamStore<F>,
    memory: Vec<F>,
    memory_keep: Vec<bool>,
    memory_len: usize,
}

impl<'a, F: Real> ModelScorer<'a, F> {
    pub fn new(model: &'a HeroSumm, store: &'a ParamStore<F>, example: &EncodedExample) -> Result<Self> {
        let batch = Batch::new(&[example])?;
        let mut t = Tape::eval();
        let enc = model.encode(&mut t, store, &batch)?;
        Ok(ModelScorer {
            model,
            store,
            memory: t.value(enc.memory).to_vec(),
            memory_len: t.shape(enc.memory)[1],
            memory_keep: enc.memory_keep,
        })
    }
}

impl<F: Real> StepScorer for ModelScorer<'_, F> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn score(&mut self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        let k = prefixes.len();
        let len = prefixes.first().map_or(0, Vec::len);
        if len == 0 || prefixes.iter().any(|p| p.len() != len) {
            return Err(Error::invalid("prefixes must be non-empty and of equal length"));
        }
        let d = self.model.config.d_model;
        let mut t = Tape::eval();
        let memory = t.constant(&[k, self.memory_len, d], self.memory.repeat(k))?;
        let keep = self.memory_keep.repeat(k);
        let inputs: Vec<usize> = prefixes.iter().flatten().map(|&id| id as usize).collect();
        let logits = self
            .model
            .decode_logits(&mut t, self.store, memory, &keep, &inputs, &vec![true; k * len])?;
        let v = self.vocab_size();
        let values = t.value(logits);
        Ok((0..k)
            .map(|i| {
                let row = &values[((i + 1) * len - 1) * v..(i + 1) * len * v];
                log_softmax(row)
            })
            .collect())
    }
}

fn log_softmax<F: Real>(row: &[F]) -> Vec<f64> {
    let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x.as_f64() - lse).collect()
}

/// `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

/// Whether some trigram occurs twice in `tokens`.
pub fn has_repeated_trigram(tokens: &[u32]) -> bool {
    let mut seen = HashSet::new();
    tokens.windows(3).any(|w| !seen.insert(w))
}

fn repeats_trigram(tokens: &[u32], next: u32) -> bool {
    let n = tokens.len();
    if n < 2 {
        return false;
    }
    let tail = [tokens[n - 2], tokens[n - 1], next];
    tokens.windows(3).any(|w| w == tail)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Output tokens without start or end markers.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// `log_prob / length_penalty(tokens.len(), alpha)`.
    pub score: f64,
}

/// Tokens that never appear in an output.
fn never_emitted(id: u32) -> bool {
    matches!(id, PAD | BOS | SEP)
}

/// Whether `id` may follow `out` under the length and repetition rules.
fn allowed(id: u32, out: &[u32], config: &DecodeConfig) -> bool {
    if never_emitted(id) {
        return false;
    }
    let len = out.len();
    if id == EOS {
        return len >= config.min_len;
    }
    len < config.max_len && !(config.block_trigrams && repeats_trigram(out, id))
}

/// Repeatedly takes the most likely allowed token.
pub fn greedy(scorer: &mut dyn StepScorer, config: &DecodeConfig) -> Result<Hypothesis> {
    config.validate()?;
    let mut prefix = vec![BOS];
    let mut log_prob = 0.0;
    loop {
        let row = scorer.score(std::slice::from_ref(&prefix))?.remove(0);
        let out = &prefix[1..];
        let best = (0..row.len() as u32)
            .filter(|&id| allowed(id, out, config))
            .max_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]).then(b.cmp(&a)))
            .ok_or_else(|| Error::invalid(format!("no token may follow a {}-token output", out.len())))?;
        log_prob += row[best as usize];
        if best == EOS {
            let tokens = out.to_vec();
            let score = log_prob / length_penalty(tokens.len(), config.alpha);
            return Ok(Hypothesis { tokens, log_prob, score });
        }
        prefix.push(best);
    }
}

/// Length-normalized beam search. Returns up to `beam` finished
/// hypotheses, best first. The search ends once the top-ranked
/// extension is the end marker.
pub fn beam_search(scorer: &mut dyn StepScorer, config: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    config.validate()?;
    let k = config.beam;
    let mut live: Vec<(Vec<u32>, f64)> = vec![(vec![BOS], 0.0)];
    let mut done: Vec<Hypothesis> = Vec::new();
    let mut top_finished = false;
    while !live.is_empty() && !top_finished {
        let prefixes: Vec<Vec<u32>> = live.iter().map(|(p, _)| p.clone()).collect();
        let rows = scorer.score(&prefixes)?;
        let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
        for (b, ((prefix, lp), row)) in live.iter().zip(&rows).enumerate() {
            let out = &prefix[1..];
            for (id, &p) in row.iter().enumerate() {
                if allowed(id as u32, out, config) {
                    candidates.push((lp + p, b, id as u32));
                }
            }
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut next = Vec::with_capacity(k);
        for (rank, &(lp, b, id)) in candidates.iter().enumerate() {
            if next.len() == k {
                break;
            }
            let prefix = &live[b].0;
            if id == EOS {
                if rank < k {
                    top_finished |= rank == 0;
                    let tokens = prefix[1..].to_vec();
                    let score = lp / length_penalty(tokens.len(), config.alpha);
                    done.push(Hypothesis { tokens, log_prob: lp, score });
                }
                continue;
            }
            let mut p = prefix.clone();
            p.push(id);
            next.push((p, lp));
        }
        live = next;
    }
    if done.is_empty() {
        return Err(Error::invalid("beam search finished no hypothesis"));
    }
    done.sort_by(|a, b| b.score.total_cmp(&a.score));
    done.truncate(k);
    Ok(done)
}

/// Best hypothesis: greedy for a beam of one with no length penalty,
/// otherwise beam search.
pub fn decode_best(scorer: &mut dyn StepScorer, config: &DecodeConfig) -> Result<Hypothesis> {
    if config.beam == 1 && config.alpha == 0.0 {
        return greedy(scorer, config);
    }
    Ok(beam_search(scorer, config)?.remove(0))
}
