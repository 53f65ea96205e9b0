//! Laplace noise for numeric releases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::Value;
use crate::series::ResultSet;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("noise requires a numeric stream")]
    CategoricalStream,
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("value sensitivity must be positive, got {0}")]
    NonPositiveSensitivity(f64),
}

/// Deterministic generator for reproducible noisy releases.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One draw from Laplace(0, `scale`) by inverse transform.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -scale * u.signum() * libm::log(tail);
        }
    }
}

/// Adds independent Laplace(`value_sensitivity / epsilon`) noise to every value.
pub fn apply_noise<R: Rng + ?Sized>(
    result: &ResultSet,
    epsilon: f64,
    value_sensitivity: f64,
    rng: &mut R,
) -> Result<ResultSet, NoiseError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(NoiseError::NonPositiveEpsilon(epsilon));
    }
    if value_sensitivity.is_nan() || value_sensitivity <= 0.0 {
        return Err(NoiseError::NonPositiveSensitivity(value_sensitivity));
    }
    if result
        .readings
        .iter()
        .any(|r| matches!(r.value, Value::Category(_)))
    {
        return Err(NoiseError::CategoricalStream);
    }
    let scale = value_sensitivity / epsilon;
    let mut out = result.clone();
    for r in &mut out.readings {
        if let Value::Numeric(v) = &mut r.value {
            *v += sample_laplace(rng, scale);
        }
    }
    out.accuracy.noise_epsilon = Some(epsilon);
    Ok(out)
}
