use ndarray::Array2;

use super::denoiser::{stack_rows, NoisePredictor, PolicyGrads, PolicyParams, StepCondition};
use super::{DiffusionError, NoiseSchedule};
use crate::dataset::{step_feature, Batch, NormStats, CHUNK_DIM};

/// Denoiser inputs for one loss evaluation. Chunks and windows are
/// normalized.
#[derive(Debug, Clone)]
pub struct LossBatch {
    pub x0: Array2<f64>,
    pub obs: Array2<f64>,
    pub cond: Vec<StepCondition>,
    pub k: Vec<usize>,
    pub noise: Array2<f64>,
}

impl LossBatch {
    /// Items with `null_mask[i]` set get the null step token.
    pub fn from_batch(batch: &Batch, stats: &NormStats, null_mask: &[bool]) -> Self {
        assert_eq!(null_mask.len(), batch.len(), "one mask entry per item");
        let x0: Vec<[f64; CHUNK_DIM]> = batch.chunks.iter().map(|c| c.flat()).collect();
        let obs: Vec<_> = batch.windows.iter().map(|w| w.flat()).collect();
        let cond = batch
            .windows
            .iter()
            .zip(null_mask)
            .map(|(w, &null)| {
                if null {
                    StepCondition::Null
                } else {
                    StepCondition::Active(step_feature(w.s_t, stats))
                }
            })
            .collect();
        Self {
            x0: stack_rows(&x0),
            obs: stack_rows(&obs),
            cond,
            k: batch.k.clone(),
            noise: stack_rows(&batch.noise),
        }
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// Row-wise forward diffusion of `x0` with `noise` at each item's `k`.
    pub fn noisy(&self, schedule: &NoiseSchedule) -> Result<Array2<f64>, DiffusionError> {
        let mut out = self.x0.clone();
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            let k = self.k[i];
            schedule.check_step(k)?;
            let ab = schedule.alpha_bar(k);
            let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
            row.zip_mut_with(&self.noise.row(i), |x, e| *x = a * *x + s * e);
        }
        Ok(out)
    }
}

/// Mean squared error between the injected noise and the prediction.
pub fn ddpm_loss_value<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    batch: &LossBatch,
) -> Result<f64, DiffusionError> {
    let xk = batch.noisy(schedule)?;
    let pred = predictor.predict_noise(xk.view(), batch.obs.view(), &batch.cond, &batch.k)?;
    let diff = &pred - &batch.noise;
    Ok(diff.mapv(|d| d * d).mean().unwrap_or(0.0))
}

/// Loss and parameter gradients of [`ddpm_loss_value`] for the policy
/// network.
pub fn ddpm_loss(
    params: &PolicyParams,
    schedule: &NoiseSchedule,
    batch: &LossBatch,
) -> Result<(f64, PolicyGrads), DiffusionError> {
    let xk = batch.noisy(schedule)?;
    let trace = params.forward_trace(xk.view(), batch.obs.view(), &batch.cond, &batch.k)?;
    let diff = trace.output() - &batch.noise;
    let n = diff.len() as f64;
    let loss = diff.mapv(|d| d * d).sum() / n;
    if !loss.is_finite() {
        return Err(DiffusionError::NonFiniteLoss);
    }
    let grad_out = diff.mapv(|d| 2.0 * d / n);
    let grads = params.backward(&trace, grad_out.view())?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_norm_stats, generate_demos, sample_batch};
    use crate::env::EpisodeConfig;
    use crate::netcore::{grad_check, GradCheckOptions, NetError, ParamSet};
    use crate::par::ExecMode;
    use crate::rng::seeded;
    use ndarray::ArrayView2;
    use rand::Rng;

    /// Returns a fixed matrix regardless of input.
    struct Constant(Array2<f64>);

    impl NoisePredictor for Constant {
        fn predict_noise(
            &self,
            _x: ArrayView2<f64>,
            _obs: ArrayView2<f64>,
            _cond: &[StepCondition],
            _k: &[usize],
        ) -> Result<Array2<f64>, NetError> {
            Ok(self.0.clone())
        }
    }

    fn synthetic_batch(b: usize, seed: u64, noise: Option<f64>) -> LossBatch {
        let mut rng = seeded(seed);
        LossBatch {
            x0: Array2::from_shape_fn((b, CHUNK_DIM), |_| rng.random_range(-2.0..2.0)),
            obs: Array2::from_shape_fn((b, crate::dataset::OBS_DIM), |_| {
                rng.random_range(-2.0..2.0)
            }),
            cond: (0..b)
                .map(|i| {
                    if i % 3 == 0 {
                        StepCondition::Null
                    } else {
                        StepCondition::Active(rng.random_range(0.0..1.2))
                    }
                })
                .collect(),
            k: (0..b).map(|_| rng.random_range(1..=50)).collect(),
            noise: Array2::from_shape_fn((b, CHUNK_DIM), |_| match noise {
                Some(v) => v,
                None => rng.random_range(-2.0..2.0),
            }),
        }
    }

    #[test]
    fn perfect_stub_has_zero_loss() {
        let s = NoiseSchedule::default();
        let b = synthetic_batch(4, 1, None);
        let stub = Constant(b.noise.clone());
        assert_eq!(ddpm_loss_value(&stub, &s, &b).unwrap(), 0.0);
    }

    #[test]
    fn zero_stub_against_unit_noise_has_unit_loss() {
        let s = NoiseSchedule::default();
        let b = synthetic_batch(4, 1, Some(1.0));
        let stub = Constant(Array2::zeros((4, CHUNK_DIM)));
        assert_eq!(ddpm_loss_value(&stub, &s, &b).unwrap(), 1.0);
    }

    #[test]
    fn analytic_value_matches_generic_value() {
        let s = NoiseSchedule::default();
        let p = PolicyParams::init(&mut seeded(3));
        let b = synthetic_batch(6, 4, None);
        let (l, _) = ddpm_loss(&p, &s, &b).unwrap();
        assert!((l - ddpm_loss_value(&p, &s, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_step_rejected() {
        let s = NoiseSchedule::default();
        let mut b = synthetic_batch(2, 1, None);
        b.k[1] = 0;
        assert!(ddpm_loss_value(&Constant(Array2::zeros((2, CHUNK_DIM))), &s, &b).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = NoiseSchedule::default();
        for seed in 0..4 {
            let mut p = PolicyParams::init(&mut seeded(100 + seed));
            if seed % 2 == 1 {
                p = p.with_skip(&s);
            }
            let b = synthetic_batch(3, 200 + seed, None);
            let report = grad_check(
                &p,
                |q: &PolicyParams| {
                    let (l, g) = ddpm_loss(q, &s, &b).unwrap();
                    (l, g.to_flat())
                },
                1e-4,
                GradCheckOptions {
                    max_coords: Some(400),
                    ..GradCheckOptions::default()
                },
            );
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn real_batch_builds() {
        let demos = generate_demos(2, 9, &EpisodeConfig::default(), ExecMode::Sequential).unwrap();
        let stats = compute_norm_stats(&demos).unwrap();
        let batch = sample_batch(&demos, &stats, 8, 50, &mut seeded(1));
        let mask = [true, false, false, false, true, false, false, false];
        let lb = LossBatch::from_batch(&batch, &stats, &mask);
        assert_eq!(lb.cond[0], StepCondition::Null);
        assert_eq!(
            lb.cond[1],
            StepCondition::Active(batch.windows[1].s_t / stats.s_mean)
        );
        assert_eq!(lb.x0.dim(), (8, CHUNK_DIM));
    }
}
