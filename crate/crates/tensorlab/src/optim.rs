//! Adam with the inverse-square-root warmup ("Noam") learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::{ParamStore, Real, Result, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub warmup: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub d_model: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            base_lr: 1.0,
            warmup: 8000,
            beta1: 0.9,
            beta2: 0.998,
            eps: 1e-9,
            d_model: 256,
        }
    }
}

/// `base_lr · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)` for
/// `step ≥ 1`.
pub fn noam_lr(base_lr: f64, d_model: usize, warmup: u64, step: u64) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup.max(1) as f64;
    base_lr * (d_model as f64).powf(-0.5) * step.powf(-0.5).min(step * warmup.powf(-1.5))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

#[derive(Clone, Debug)]
pub struct NoamAdam<F> {
    pub config: AdamConfig,
    pub state: OptimizerState<F>,
}

impl<F: Real> NoamAdam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![F::zero(); p.value.len()]).collect();
        NoamAdam {
            config,
            state: OptimizerState {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    pub fn current_lr(&self) -> f64 {
        noam_lr(self.config.base_lr, self.config.d_model, self.config.warmup, self.state.step)
    }

    /// Applies one update from the gradients held in `store` and returns the
    /// learning rate used. Nothing is modified if a gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<f64> {
        if self.state.m.len() != store.len() {
            return Err(TensorError::shape(
                "adam",
                format!("optimizer tracks {} tensors, store has {}", self.state.m.len(), store.len()),
            ));
        }
        for (id, p) in store.iter() {
            if self.state.m[id.index()].len() != p.value.len() {
                return Err(TensorError::shape("adam", format!("moment shape mismatch for {}", p.name)));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let lr = self.current_lr();
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bias1 = F::lit(1.0 - c.beta1.powi(t));
        let bias2 = F::lit(1.0 - c.beta2.powi(t));
        let (lr_f, eps) = (F::lit(lr), F::lit(c.eps));
        for (id, p) in store.iter_mut() {
            let m = &mut self.state.m[id.index()];
            let v = &mut self.state.v[id.index()];
            for j in 0..p.value.len() {
                let g = p.grad[j];
                m[j] = b1 * m[j] + (F::one() - b1) * g;
                v[j] = b2 * v[j] + (F::one() - b2) * g * g;
                let mhat = m[j] / bias1;
                let vhat = v[j] / bias2;
                p.value[j] -= lr_f * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(lr)
    }
}
