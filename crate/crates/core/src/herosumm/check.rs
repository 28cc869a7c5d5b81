//! Finite-difference checks of every model component at toy dimensions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorlab::{grad_check, GradCheckConfig, GradCheckReport, ParamStore, Tape, Var};

use super::batch::{Batch, EncodedExample};
use super::{HeroSumm, ModelConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Local,
    Pooling,
    Query,
    Global,
    Ordering,
    Merge,
    Decoder,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Local,
        Component::Pooling,
        Component::Query,
        Component::Global,
        Component::Ordering,
        Component::Merge,
        Component::Decoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Local => "local",
            Component::Pooling => "pooling",
            Component::Query => "query",
            Component::Global => "global",
            Component::Ordering => "ordering",
            Component::Merge => "merge",
            Component::Decoder => "decoder",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown component {s:?}")))
    }
}

/// Every component switched on at dimensions small enough to difference
/// exhaustively.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        ffn_hidden: 12,
        heads: 2,
        vocab_size: 17,
        dropout: 0.1,
        max_doc_tokens: 5,
        ..ModelConfig::tiny(17)
    }
}

/// Two examples with unequal document counts and lengths, so padding and
/// masks are exercised.
pub fn toy_batch(config: &ModelConfig, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = config.vocab_size as u32;
    let mut ids = |n: usize| (0..n).map(|_| rng.gen_range(5..v)).collect::<Vec<u32>>();
    let a = EncodedExample {
        docs: vec![ids(4), ids(3), ids(5)],
        query: ids(3),
        summary: ids(3),
    };
    let b = EncodedExample {
        docs: vec![ids(2), ids(4)],
        query: ids(2),
        summary: ids(2),
    };
    Batch::new(&[&a, &b])
}

fn weighted_sum(t: &mut Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = t.value(x).len();
    let w = t.constant(t.shape(x).to_vec().as_slice(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let p = t.mul(x, w)?;
    Ok(t.sum(p))
}

fn component_loss(model: &HeroSumm, c: Component, t: &mut Tape<f64>, s: &ParamStore<f64>, batch: &Batch) -> Result<Var> {
    let cfg = &model.config;
    let drop = cfg.dropout;
    let e = batch.examples;
    match c {
        Component::Local => {
            let h0 = model.embed_inputs(t, s, batch)?;
            let (y, _) = model.local[0].forward(t, s, h0, &batch.token_keep, drop)?;
            weighted_sum(t, y, 1)
        }
        Component::Pooling => {
            let h0 = model.embed_inputs(t, s, batch)?;
            let (y, _) = model.global[0].pool.forward_padded(t, s, h0, &batch.token_keep)?;
            weighted_sum(t, y, 2)
        }
        Component::Query => {
            let h0 = model.embed_inputs(t, s, batch)?;
            let hq = model.embed_query(t, s, batch)?;
            let y = model.query[0].forward(t, s, h0, hq, &batch.query_keep, drop)?;
            weighted_sum(t, y, 3)
        }
        Component::Global => {
            let h0 = model.embed_inputs(t, s, batch)?;
            let (y, pooled, _) = model.global[0].forward(t, s, h0, e, &batch.token_keep, &batch.doc_keep, drop)?;
            let a = weighted_sum(t, y, 4)?;
            let b = weighted_sum(t, pooled, 5)?;
            Ok(t.add(a, b)?)
        }
        Component::Ordering => {
            let block = model.ordering.ok_or_else(|| Error::invalid("ordering is disabled"))?;
            let h0 = model.embed_inputs(t, s, batch)?;
            let (y, pooled, _) = model.global[0].forward(t, s, h0, e, &batch.token_keep, &batch.doc_keep, drop)?;
            let r = block.scores(t, s, pooled, e, &batch.doc_keep)?;
            let out = block.apply(t, s, y, r)?;
            let a = weighted_sum(t, out, 6)?;
            let b = weighted_sum(t, r, 7)?;
            Ok(t.add(a, b)?)
        }
        Component::Merge => {
            let enc = model.encode(t, s, batch)?;
            weighted_sum(t, enc.memory, 8)
        }
        Component::Decoder => Ok(model.forward(t, s, batch, None)?.loss),
    }
}

/// Checks one component of a model built from `config`.
pub fn check_component(config: &ModelConfig, component: Component, seed: u64) -> Result<GradCheckReport> {
    let (model, mut store) = HeroSumm::build::<f64>(config.clone(), seed)?;
    let batch = toy_batch(config, seed)?;
    let cfg = GradCheckConfig {
        seed,
        eps: 1e-4,
        five_point: true,
        ..GradCheckConfig::default()
    };
    grad_check(&mut store, |t, s| component_loss(&model, component, t, s, &batch), &cfg)
}

/// Checks the end-to-end loss of a model built from `config`.
pub fn check_model(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    check_component(config, Component::Decoder, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_names_round_trip() {
        for c in Component::ALL {
            assert_eq!(c.name().parse::<Component>().unwrap(), c);
        }
        assert!("nope".parse::<Component>().is_err());
    }
}
