//! Central finite-difference verification of tape gradients.
//!
//! Checks always run on an evaluation tape, so dropout is disabled while the
//! loss is differenced.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{ParamStore, Tape, TensorError, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Use the five-point central stencil instead of the three-point one.
    pub five_point: bool,
    /// Above this many coordinates a random subsample of this size is checked.
    pub max_coordinates: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            five_point: false,
            max_coordinates: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(|a|, |n|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Coordinates left out because a perturbation moved a relu input
    /// across zero, where the loss has no derivative.
    pub skipped: usize,
    /// `name[index]` of the worst coordinate with both derivative values.
    pub worst: Option<String>,
}

/// Compares the analytic gradient of `forward` against central differences
/// for every coordinate of every parameter the loss touches.
pub fn grad_check<E, Fwd>(
    store: &mut ParamStore<f64>,
    mut forward: Fwd,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    Fwd: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, E>,
{
    let mut tape = Tape::eval();
    let loss = forward(&mut tape, store)?;
    if tape.value(loss).len() != 1 {
        return Err(TensorError::invalid("grad_check", "forward must return a scalar").into());
    }
    let grads = tape.backward(loss)?;
    let mut coords: Vec<(usize, usize, f64)> = Vec::new();
    let mut touched: Vec<_> = tape.params().collect();
    touched.sort_by_key(|(id, _)| *id);
    for (id, _) in touched {
        let analytic = grads.param(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; store.get(id).value.len()]);
        if analytic.iter().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFinite(format!("gradient of {}", store.get(id).name)).into());
        }
        coords.extend(analytic.into_iter().enumerate().map(|(j, g)| (id.index(), j, g)));
    }
    if coords.len() > config.max_coordinates {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut picked = sample(&mut rng, coords.len(), config.max_coordinates).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }

    let base = tape.kink_signature();
    let mut eval = |store: &ParamStore<f64>| -> Result<(f64, bool), E> {
        let mut tape = Tape::eval();
        let loss = forward(&mut tape, store)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(TensorError::NonFinite("grad_check loss".into()).into());
        }
        Ok((v, tape.kink_signature() == base))
    };

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: 0,
        skipped: 0,
        worst: None,
    };
    for (p, j, analytic) in coords {
        let id = ids[p];
        let orig = store.get(id).value[j];
        let steps: &[f64] = if config.five_point { &[1.0, -1.0, 2.0, -2.0] } else { &[1.0, -1.0] };
        let mut f = [0.0; 4];
        let mut smooth = true;
        for (k, &step) in steps.iter().enumerate() {
            store.get_mut(id).value[j] = orig + step * config.eps;
            let v = eval(store);
            store.get_mut(id).value[j] = orig;
            let (v, same) = v?;
            f[k] = v;
            smooth &= same;
        }
        if !smooth {
            report.skipped += 1;
            continue;
        }
        report.coordinates += 1;
        let numeric = if config.five_point {
            (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * config.eps)
        } else {
            (f[0] - f[1]) / (2.0 * config.eps)
        };
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = Some(format!(
                "{}[{j}] analytic {analytic:.6e} numeric {numeric:.6e}",
                store.get(id).name
            ));
        }
    }
    Ok(report)
}
