use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Real, Result, TensorError};

/// Kaiming-uniform initialization: i.i.d. samples from
/// `U[-√(6/fan_in), +√(6/fan_in)]`, reproducible for a given seed.
pub fn kaiming_uniform<F: Real>(len: usize, fan_in: usize, seed: u64) -> Result<Vec<F>> {
    if fan_in == 0 {
        return Err(TensorError::invalid("kaiming_uniform", "fan_in must be at least 1"));
    }
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| F::lit(rng.gen_range(-bound..=bound))).collect())
}

/// Sinusoidal encoding of one position over `dim` features (even `dim`):
/// `[2j] = sin(pos / 10000^(2j/dim))`, `[2j+1] = cos(pos / 10000^(2j/dim))`.
pub fn sinusoid(position: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim / 2 {
        let angle = position / 10000f64.powf(2.0 * j as f64 / dim as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_within_bound() {
        let w: Vec<f64> = kaiming_uniform(10_000, 6, 3).unwrap();
        assert!(w.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn moments_match_the_uniform_distribution() {
        let fan_in = 100;
        let n = 100_000;
        let w: Vec<f64> = kaiming_uniform(n, fan_in, 11).unwrap();
        let bound = (6.0f64 / fan_in as f64).sqrt();
        let var_closed = bound * bound / 3.0;
        let mean = w.iter().sum::<f64>() / n as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let sigma_mean = (var_closed / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}");
        assert!((var - var_closed).abs() / var_closed < 0.05, "var {var} vs {var_closed}");
        assert!((var_closed - 2.0 / fan_in as f64).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_array() {
        let a: Vec<f32> = kaiming_uniform(64, 8, 5).unwrap();
        let b: Vec<f32> = kaiming_uniform(64, 8, 5).unwrap();
        let c: Vec<f32> = kaiming_uniform(64, 8, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_fan_in_is_rejected() {
        assert!(kaiming_uniform::<f64>(4, 0, 0).is_err());
    }

    #[test]
    fn position_zero_alternates_zero_one() {
        let pe = sinusoid(0.0, 8);
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
