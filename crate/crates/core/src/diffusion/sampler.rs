use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::denoiser::{stack_rows, NoisePredictor, StepCondition};
use super::guidance::{combine_one, lambda_at, GuidanceConfig};
use super::{DiffusionError, NoiseSchedule};
use crate::dataset::{CHUNK_DIM, OBS_DIM};
use crate::rng::{seeded, standard_normals};

pub const DEFAULT_INFERENCE_STEPS: usize = 10;

/// Subsampled step sequence for DDIM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdimPlan {
    pub inference_steps: usize,
    /// Strictly decreasing, starting at `K`.
    pub step_indices: Vec<usize>,
    pub eta: f64,
}

impl DdimPlan {
    /// `n` uniformly spaced indices `K, K - K/n, ..., K/n`, `eta = 0`.
    pub fn uniform(train_steps: usize, n: usize) -> Result<Self, DiffusionError> {
        if n == 0 || n > train_steps {
            return Err(DiffusionError::InvalidPlan {
                inference_steps: n,
                train_steps,
            });
        }
        let step_indices = (0..n).map(|i| (n - i) * train_steps / n).collect();
        Ok(Self {
            inference_steps: n,
            step_indices,
            eta: 0.0,
        })
    }

    /// `(k, k_prev)` pairs; the last `k_prev` is 0.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.step_indices.iter().enumerate().map(|(i, &k)| {
            let prev = self.step_indices.get(i + 1).copied().unwrap_or(0);
            (k, prev)
        })
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<(), DiffusionError> {
        let ok = self.inference_steps == self.step_indices.len()
            && !self.step_indices.is_empty()
            && self.step_indices.windows(2).all(|w| w[0] > w[1])
            && self.step_indices[0] <= schedule.steps
            && *self.step_indices.last().expect("non-empty") >= 1
            && self.eta == 0.0;
        if ok {
            Ok(())
        } else {
            Err(DiffusionError::InvalidPlan {
                inference_steps: self.inference_steps,
                train_steps: schedule.steps,
            })
        }
    }
}

fn ddim_coeffs(
    schedule: &NoiseSchedule,
    k: usize,
    k_prev: usize,
) -> Result<(f64, f64, f64, f64), DiffusionError> {
    schedule.check_step(k)?;
    if k_prev >= k {
        return Err(DiffusionError::StepOrder { k, k_prev });
    }
    let ab = schedule.alpha_bar(k);
    if ab <= 0.0 {
        return Err(DiffusionError::DegenerateAlphaBar { k });
    }
    let ab_prev = schedule.alpha_bar(k_prev);
    Ok((ab.sqrt(), (1.0 - ab).sqrt(), ab_prev.sqrt(), (1.0 - ab_prev).sqrt()))
}

/// Deterministic DDIM update from step `k` to `k_prev`.
pub fn ddim_step(
    schedule: &NoiseSchedule,
    eps_hat: &[f64],
    x_k: &[f64],
    k: usize,
    k_prev: usize,
) -> Result<Vec<f64>, DiffusionError> {
    if eps_hat.len() != x_k.len() {
        return Err(DiffusionError::LengthMismatch {
            expected: x_k.len(),
            found: eps_hat.len(),
        });
    }
    let (a, s, a_prev, s_prev) = ddim_coeffs(schedule, k, k_prev)?;
    Ok(x_k
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| {
            let x0 = (x - s * e) / a;
            a_prev * x0 + s_prev * e
        })
        .collect())
}

/// Ancestral update `α (x_k − γ ε̂) + σ z` given a noise prediction.
pub fn ddpm_reverse_update(
    schedule: &NoiseSchedule,
    eps_hat: &[f64],
    x_k: &[f64],
    k: usize,
    z: &[f64],
) -> Result<Vec<f64>, DiffusionError> {
    schedule.check_step(k)?;
    if eps_hat.len() != x_k.len() || z.len() != x_k.len() {
        return Err(DiffusionError::LengthMismatch {
            expected: x_k.len(),
            found: if eps_hat.len() != x_k.len() { eps_hat.len() } else { z.len() },
        });
    }
    let c = schedule.reverse_coeffs[k - 1];
    Ok(x_k
        .iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((x, e), zi)| c.alpha * (x - c.gamma * e) + c.sigma * zi)
        .collect())
}

/// One ancestral reverse step with the denoiser evaluated at `(obs, cond, k)`.
pub fn ddpm_reverse_step<P: NoisePredictor + ?Sized>(
    schedule: &NoiseSchedule,
    predictor: &P,
    obs: &[f64; OBS_DIM],
    cond: StepCondition,
    x_k: &[f64; CHUNK_DIM],
    k: usize,
    z: &[f64],
) -> Result<Vec<f64>, DiffusionError> {
    schedule.check_step(k)?;
    let eps = predictor.predict_noise(
        ArrayView2::from_shape((1, CHUNK_DIM), x_k).expect("row"),
        ArrayView2::from_shape((1, OBS_DIM), obs).expect("row"),
        &[cond],
        &[k],
    )?;
    ddpm_reverse_update(schedule, eps.as_slice().expect("contiguous"), x_k, k, z)
}

/// How conditional and unconditional predictions are used while sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Both predictions, combined with `λ = lambda_at(s_t)`. With
    /// `null_step` the conditional branch also receives the null token.
    Guided { null_step: bool },
    /// Unconditional prediction only.
    Unconditional,
}

/// One chunk to sample: a normalized observation, the raw step count and
/// the seed of the initial noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRequest {
    pub obs: [f64; OBS_DIM],
    pub s_t: f64,
    pub seed: u64,
}

/// Output of [`sample_normalized`]: normalized chunks and the λ used for
/// each (0 for unconditional sampling).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub chunks: Vec<[f64; CHUNK_DIM]>,
    pub lambdas: Vec<f64>,
}

/// Runs the DDIM plan for every request in one batch. λ is held constant
/// across each chunk's denoising steps.
#[allow(clippy::too_many_arguments)]
pub fn sample_normalized<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    plan: &DdimPlan,
    guidance: &GuidanceConfig,
    s_mean: f64,
    mode: SampleMode,
    requests: &[SampleRequest],
) -> Result<SampleOutput, DiffusionError> {
    plan.validate(schedule)?;
    let b = requests.len();
    let obs_rows: Vec<[f64; OBS_DIM]> = requests.iter().map(|r| r.obs).collect();
    let obs = stack_rows(&obs_rows);
    let mut x = Array2::zeros((b, CHUNK_DIM));
    for (mut row, r) in x.outer_iter_mut().zip(requests) {
        let z = standard_normals(&mut seeded(r.seed), CHUNK_DIM);
        row.assign(&ArrayView1::from(&z));
    }
    let uncond = vec![StepCondition::Null; b];
    let (cond, lambdas): (Vec<StepCondition>, Vec<f64>) = match mode {
        SampleMode::Guided { null_step } => requests
            .iter()
            .map(|r| {
                let c = if null_step {
                    StepCondition::Null
                } else {
                    StepCondition::Active(r.s_t / s_mean)
                };
                (c, lambda_at(guidance, r.s_t))
            })
            .unzip(),
        SampleMode::Unconditional => (uncond.clone(), vec![0.0; b]),
    };

    for (k, k_prev) in plan.transitions() {
        let ks = vec![k; b];
        let eps_u = predictor.predict_noise(x.view(), obs.view(), &uncond, &ks)?;
        let eps = match mode {
            SampleMode::Unconditional => eps_u,
            SampleMode::Guided { .. } => {
                let mut eps_c = predictor.predict_noise(x.view(), obs.view(), &cond, &ks)?;
                for (mut c_row, (u_row, &lambda)) in
                    eps_c.outer_iter_mut().zip(eps_u.outer_iter().zip(&lambdas))
                {
                    c_row.zip_mut_with(&u_row, |c, &u| *c = combine_one(*c, u, lambda));
                }
                eps_c
            }
        };
        let (a, s, a_prev, s_prev) = ddim_coeffs(schedule, k, k_prev)?;
        x.zip_mut_with(&eps, |xi, &e| {
            let x0 = (*xi - s * e) / a;
            *xi = a_prev * x0 + s_prev * e;
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(DiffusionError::NonFiniteSample);
    }
    let chunks = x
        .outer_iter()
        .map(|row| {
            let mut out = [0.0; CHUNK_DIM];
            for (o, v) in out.iter_mut().zip(row) {
                *o = *v;
            }
            out
        })
        .collect();
    Ok(SampleOutput { chunks, lambdas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{forward_diffuse, make_noise_schedule, PolicyParams};
    use crate::netcore::NetError;

    /// Predicts `scale · x + shift · s` where `s` is the step feature (0 for
    /// the null token).
    struct Linear {
        scale: f64,
        shift: f64,
    }

    impl NoisePredictor for Linear {
        fn predict_noise(
            &self,
            x: ArrayView2<f64>,
            _obs: ArrayView2<f64>,
            cond: &[StepCondition],
            _k: &[usize],
        ) -> Result<Array2<f64>, NetError> {
            let mut out = x.to_owned() * self.scale;
            for (mut row, c) in out.outer_iter_mut().zip(cond) {
                if let StepCondition::Active(s) = c {
                    row += self.shift * s;
                }
            }
            Ok(out)
        }
    }

    struct Fixed(Vec<f64>);

    impl NoisePredictor for Fixed {
        fn predict_noise(
            &self,
            x: ArrayView2<f64>,
            _obs: ArrayView2<f64>,
            _cond: &[StepCondition],
            _k: &[usize],
        ) -> Result<Array2<f64>, NetError> {
            Ok(Array2::from_shape_fn(x.dim(), |(_, j)| self.0[j]))
        }
    }

    #[test]
    fn plan_default_indices() {
        let p = DdimPlan::uniform(50, 10).unwrap();
        assert_eq!(p.step_indices, vec![50, 45, 40, 35, 30, 25, 20, 15, 10, 5]);
        let t: Vec<_> = p.transitions().collect();
        assert_eq!(t.first(), Some(&(50, 45)));
        assert_eq!(t.last(), Some(&(5, 0)));
        assert!(DdimPlan::uniform(5, 10).is_err());
        assert!(DdimPlan::uniform(5, 0).is_err());
    }

    #[test]
    fn ddim_zero_noise_rescales() {
        let s = NoiseSchedule::default();
        let x0 = [0.5, -1.0];
        let xk: Vec<f64> = x0.iter().map(|v| s.alpha_bar(30).sqrt() * v).collect();
        let out = ddim_step(&s, &[0.0, 0.0], &xk, 30, 20).unwrap();
        for (o, v) in out.iter().zip(&x0) {
            assert!((o - s.alpha_bar(20).sqrt() * v).abs() < 1e-12);
        }
    }

    #[test]
    fn ddim_to_zero_returns_x0_prediction() {
        let s = NoiseSchedule::default();
        let (x, e) = ([0.7, 0.1], [0.3, -0.2]);
        let out = ddim_step(&s, &e, &x, 5, 0).unwrap();
        let ab = s.alpha_bar(5);
        for i in 0..2 {
            let x0 = (x[i] - (1.0 - ab).sqrt() * e[i]) / ab.sqrt();
            assert_eq!(out[i], x0);
        }
    }

    #[test]
    fn ddim_rejects_bad_order() {
        let s = NoiseSchedule::default();
        assert!(ddim_step(&s, &[0.0], &[0.0], 5, 5).is_err());
        assert!(ddim_step(&s, &[0.0], &[0.0], 51, 0).is_err());
    }

    #[test]
    fn ddpm_zero_fixed_point() {
        let s = make_noise_schedule(1, 0.3, 0.3).unwrap();
        assert_eq!(s.reverse_coeffs[0].sigma, 0.0);
        let out = ddpm_reverse_update(&s, &[0.0; 3], &[0.0; 3], 1, &[0.0; 3]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn ddpm_one_step_recovers_x0() {
        let s = make_noise_schedule(1, 0.4, 0.4).unwrap();
        let x0: Vec<f64> = (0..CHUNK_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
        let eps: Vec<f64> = (0..CHUNK_DIM).map(|i| (i as f64 * 0.11).cos()).collect();
        let x1: [f64; CHUNK_DIM] = forward_diffuse(&s, &x0, 1, &eps).unwrap().try_into().unwrap();
        let out = ddpm_reverse_step(
            &s,
            &Fixed(eps.clone()),
            &[0.0; OBS_DIM],
            StepCondition::Null,
            &x1,
            1,
            &[0.0; CHUNK_DIM],
        )
        .unwrap();
        for (o, v) in out.iter().zip(&x0) {
            assert!((o - v).abs() < 1e-12);
        }
        assert!(ddpm_reverse_update(&s, &eps, &x1, 2, &[0.0; CHUNK_DIM]).is_err());
    }

    fn requests(n: usize, s_t: f64) -> Vec<SampleRequest> {
        (0..n)
            .map(|i| SampleRequest {
                obs: [0.1 * i as f64; OBS_DIM],
                s_t,
                seed: 1000 + i as u64,
            })
            .collect()
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = NoiseSchedule::default();
        let plan = DdimPlan::uniform(50, 10).unwrap();
        let g = GuidanceConfig::new(1.1, 80.0).unwrap();
        let p = PolicyParams::init(&mut seeded(5));
        let mode = SampleMode::Guided { null_step: false };
        let a = sample_normalized(&p, &s, &plan, &g, 160.0, mode, &requests(3, 90.0)).unwrap();
        let b = sample_normalized(&p, &s, &plan, &g, 160.0, mode, &requests(3, 90.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_lambda_max_equals_unconditional() {
        let s = NoiseSchedule::default();
        let plan = DdimPlan::uniform(50, 10).unwrap();
        let g = GuidanceConfig::new(0.0, 80.0).unwrap();
        let stub = Linear {
            scale: 0.3,
            shift: 0.7,
        };
        let req = requests(4, 150.0);
        let guided =
            sample_normalized(&stub, &s, &plan, &g, 160.0, SampleMode::Guided { null_step: false }, &req)
                .unwrap();
        let uncond =
            sample_normalized(&stub, &s, &plan, &g, 160.0, SampleMode::Unconditional, &req).unwrap();
        assert_eq!(guided.chunks, uncond.chunks);
    }

    #[test]
    fn early_steps_approximate_unconditional() {
        let s = NoiseSchedule::default();
        let plan = DdimPlan::uniform(50, 10).unwrap();
        let g = GuidanceConfig::new(1.1, 80.0).unwrap();
        let stub = Linear {
            scale: 0.3,
            shift: 0.7,
        };
        let req = requests(2, 10.0);
        let guided =
            sample_normalized(&stub, &s, &plan, &g, 160.0, SampleMode::Guided { null_step: false }, &req)
                .unwrap();
        let uncond = sample_normalized(&stub, &s, &plan, &g.with_lambda_max(0.0), 160.0, SampleMode::Guided { null_step: false }, &req).unwrap();
        for (a, b) in guided.chunks.iter().zip(&uncond.chunks) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lambdas_follow_schedule() {
        let s = NoiseSchedule::default();
        let plan = DdimPlan::uniform(50, 10).unwrap();
        let g = GuidanceConfig::new(1.1, 80.0).unwrap();
        let stub = Fixed(vec![0.0; CHUNK_DIM]);
        let out =
            sample_normalized(&stub, &s, &plan, &g, 160.0, SampleMode::Guided { null_step: false }, &requests(1, 85.0))
                .unwrap();
        assert_eq!(out.lambdas, vec![lambda_at(&g, 85.0)]);
        let out = sample_normalized(&stub, &s, &plan, &g, 160.0, SampleMode::Unconditional, &requests(1, 85.0))
            .unwrap();
        assert_eq!(out.lambdas, vec![0.0]);
    }
}
