use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::data::triplet_id;
use super::decode::{decode_best, ModelScorer};
use super::{DecodeConfig, EvalMode};
use crate::dataforge::Triplet;
use crate::herosumm::EncodedExample;
use crate::rouge::{rouge_l, rouge_n, rouge_recall_truncated};
use crate::textcore::tokenize;
use crate::{Error, Result};

/// One decoded output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoded {
    pub id: String,
    pub summary: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
    /// Reported in recall mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_su4: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub rows: Vec<EvalRow>,
    pub mean: Scores,
}

impl EvalReport {
    /// Fixed-width table: one row per example, then the corpus mean.
    pub fn table(&self) -> String {
        let su4 = self.mode == EvalMode::Recall250;
        let mut out = String::new();
        let width = self.rows.iter().map(|r| r.id.len()).max().unwrap_or(0).max(6);
        write!(out, "{:width$}  {:>7}  {:>7}  {:>7}", "id", "R-1", "R-2", "R-L").unwrap();
        if su4 {
            out.push_str("   R-SU4");
        }
        out.push('\n');
        let mut line = |id: &str, s: &Scores| {
            write!(out, "{id:width$}  {:>7.4}  {:>7.4}  {:>7.4}", s.rouge_1, s.rouge_2, s.rouge_l).unwrap();
            if let Some(v) = s.rouge_su4 {
                write!(out, "  {v:>7.4}").unwrap();
            }
            out.push('\n');
        };
        for r in &self.rows {
            line(&r.id, &r.scores);
        }
        line("corpus", &self.mean);
        out
    }
}

pub fn score_pair(mode: EvalMode, candidate: &[String], reference: &[String]) -> Scores {
    match mode {
        EvalMode::F1 => Scores {
            rouge_1: rouge_n(candidate, reference, 1).f1,
            rouge_2: rouge_n(candidate, reference, 2).f1,
            rouge_l: rouge_l(candidate, reference).f1,
            rouge_su4: None,
        },
        EvalMode::Recall250 => {
            let r = rouge_recall_truncated(candidate, reference, EvalMode::RECALL_WORD_LIMIT);
            Scores {
                rouge_1: r.rouge_1,
                rouge_2: r.rouge_2,
                rouge_l: r.rouge_l,
                rouge_su4: Some(r.rouge_su4),
            }
        }
    }
}

/// Scores decoded summaries against references (matched by position) and
/// averages the rows.
pub fn score_outputs(mode: EvalMode, outputs: &[Decoded], references: &[String]) -> Result<EvalReport> {
    if outputs.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    if outputs.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} outputs for {} references",
            outputs.len(),
            references.len()
        )));
    }
    let rows: Vec<EvalRow> = outputs
        .iter()
        .zip(references)
        .map(|(o, r)| EvalRow {
            id: o.id.clone(),
            scores: score_pair(mode, &tokenize(&o.summary), &tokenize(r)),
        })
        .collect();
    let n = rows.len() as f64;
    let avg = |f: fn(&Scores) -> f64| rows.iter().map(|r| f(&r.scores)).sum::<f64>() / n;
    let mean = Scores {
        rouge_1: avg(|s| s.rouge_1),
        rouge_2: avg(|s| s.rouge_2),
        rouge_l: avg(|s| s.rouge_l),
        rouge_su4: (mode == EvalMode::Recall250).then(|| avg(|s| s.rouge_su4.unwrap_or(0.0))),
    };
    Ok(EvalReport { mode, rows, mean })
}

/// Decodes every triplet with the checkpoint, in parallel over examples.
pub fn decode_triplets(ckpt: &Checkpoint, triplets: &[Triplet], config: &DecodeConfig) -> Result<Vec<Decoded>> {
    config.validate()?;
    let limits = config.input_limits(&ckpt.model.config);
    triplets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let example = EncodedExample::from_triplet(t, &ckpt.vocab, &limits)
                .map_err(|e| Error::invalid(format!("triplet {i}: {e}")))?;
            let mut scorer = ModelScorer::new(&ckpt.model, &ckpt.store, &example)?;
            let best = decode_best(&mut scorer, config)?;
            Ok(Decoded {
                id: triplet_id(t, i),
                summary: ckpt.vocab.decode(&best.tokens),
            })
        })
        .collect()
}

/// Decodes and scores a triplet set.
pub fn evaluate(ckpt: &Checkpoint, triplets: &[Triplet], config: &DecodeConfig, mode: EvalMode) -> Result<EvalReport> {
    if triplets.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let outputs = decode_triplets(ckpt, triplets, config)?;
    let refs: Vec<String> = triplets.iter().map(|t| t.summary.clone()).collect();
    score_outputs(mode, &outputs, &refs)
}
