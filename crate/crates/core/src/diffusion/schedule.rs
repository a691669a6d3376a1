use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Linear β schedule with cumulative products and ancestral-step coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// `betas[k - 1]` is β_k.
    pub betas: Vec<f64>,
    /// `alpha_bars[k]`, with `alpha_bars[0] = 1`.
    pub alpha_bars: Vec<f64>,
    /// `reverse_coeffs[k - 1]` is the `(α, γ, σ)` triplet of step `k`.
    pub reverse_coeffs: Vec<ReverseCoeffs>,
}

/// `x_{k-1} = α (x_k − γ ε̂) + σ z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverseCoeffs {
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
}

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.18;

pub fn make_noise_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    let valid = steps >= 1 && beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0;
    if !valid {
        return Err(DiffusionError::InvalidSchedule {
            steps,
            beta_start,
            beta_end,
        });
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    for b in &betas {
        let prev = *alpha_bars.last().expect("non-empty");
        alpha_bars.push(prev * (1.0 - b));
    }
    let reverse_coeffs = (1..=steps)
        .map(|k| {
            let b = betas[k - 1];
            ReverseCoeffs {
                alpha: 1.0 / (1.0 - b).sqrt(),
                gamma: b / (1.0 - alpha_bars[k]).sqrt(),
                sigma: (b * (1.0 - alpha_bars[k - 1]) / (1.0 - alpha_bars[k])).sqrt(),
            }
        })
        .collect();
    Ok(NoiseSchedule {
        steps,
        beta_start,
        beta_end,
        betas,
        alpha_bars,
        reverse_coeffs,
    })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_noise_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    pub fn terminal_alpha_bar(&self) -> f64 {
        self.alpha_bars[self.steps]
    }

    pub(crate) fn check_step(&self, k: usize) -> Result<(), DiffusionError> {
        if k == 0 || k > self.steps {
            return Err(DiffusionError::StepOutOfRange { k, steps: self.steps });
        }
        Ok(())
    }
}

/// `√ᾱ_k · x0 + √(1 − ᾱ_k) · noise`. `k = 0` returns `x0`.
pub fn forward_diffuse(
    schedule: &NoiseSchedule,
    x0: &[f64],
    k: usize,
    noise: &[f64],
) -> Result<Vec<f64>, DiffusionError> {
    if k > schedule.steps {
        return Err(DiffusionError::StepOutOfRange {
            k,
            steps: schedule.steps,
        });
    }
    if x0.len() != noise.len() {
        return Err(DiffusionError::LengthMismatch {
            expected: x0.len(),
            found: noise.len(),
        });
    }
    let ab = schedule.alpha_bars[k];
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + s * e).collect())
}
