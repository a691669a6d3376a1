use serde::{Deserialize, Serialize};

use super::DiffusionError;

pub const DEFAULT_LAMBDA_MAX: f64 = 1.10;
/// Default `s_t0` as a fraction of the mean demonstration length.
pub const DEFAULT_S_T0_FRACTION: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub lambda_max: f64,
    /// Sigmoid midpoint, in environment steps.
    pub s_t0: f64,
}

impl GuidanceConfig {
    pub fn new(lambda_max: f64, s_t0: f64) -> Result<Self, DiffusionError> {
        if !(lambda_max >= 0.0 && lambda_max.is_finite() && s_t0 > 0.0 && s_t0.is_finite()) {
            return Err(DiffusionError::InvalidGuidance { lambda_max, s_t0 });
        }
        Ok(Self { lambda_max, s_t0 })
    }

    /// Midpoint placed at `fraction` of the mean demonstration length.
    pub fn from_mean_length(
        lambda_max: f64,
        s_mean: f64,
        fraction: f64,
    ) -> Result<Self, DiffusionError> {
        Self::new(lambda_max, s_mean * fraction)
    }

    pub fn with_lambda_max(self, lambda_max: f64) -> Self {
        Self { lambda_max, ..self }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `λ_max · sigmoid(s_t − s_t0)`.
pub fn lambda_at(guidance: &GuidanceConfig, s_t: f64) -> f64 {
    guidance.lambda_max * sigmoid(s_t - guidance.s_t0)
}

/// `λ · ε_cond + (1 − λ) · ε_uncond`.
pub fn cfg_combine(
    eps_cond: &[f64],
    eps_uncond: &[f64],
    lambda: f64,
) -> Result<Vec<f64>, DiffusionError> {
    if eps_cond.len() != eps_uncond.len() {
        return Err(DiffusionError::LengthMismatch {
            expected: eps_cond.len(),
            found: eps_uncond.len(),
        });
    }
    Ok(eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(c, u)| combine_one(*c, *u, lambda))
        .collect())
}

/// Equal predictions are returned unchanged.
#[inline]
pub(crate) fn combine_one(c: f64, u: f64, lambda: f64) -> f64 {
    if c == u {
        u
    } else {
        lambda * c + (1.0 - lambda) * u
    }
}
