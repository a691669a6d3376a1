use crate::dataset::Demonstration;
use crate::diffusion::{DiffusionError, Policy, SampleMode};
use crate::par::{map_indexed, ExecMode};
use crate::rng::derive_seed;
use crate::trainer::chunk_mse;

pub const DEFAULT_SWEEP_GRID: [f64; 9] = [0.0, 0.25, 0.5, 1.0, 1.10, 1.5, 2.0, 3.0, 5.0];
pub const DEFAULT_TRIALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub lambda_max: f64,
    pub trial: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `(λ_max, mean MSE over trials)` in grid order.
    pub fn means(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|e| e.0 == r.lambda_max) {
                Some(e) => {
                    e.1 += r.mse;
                    e.2 += 1;
                }
                None => out.push((r.lambda_max, r.mse, 1)),
            }
        }
        out.into_iter().map(|(l, s, n)| (l, s / n as f64)).collect()
    }

    /// Grid value with the lowest mean MSE; the first one wins ties.
    pub fn argmin(&self) -> Option<(f64, f64)> {
        self.means()
            .into_iter()
            .fold(None, |best: Option<(f64, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            })
    }

    pub fn mean_at(&self, lambda_max: f64) -> Option<f64> {
        self.means()
            .into_iter()
            .find(|e| e.0 == lambda_max)
            .map(|e| e.1)
    }
}

/// Validation-chunk MSE for each `λ_max` in `values`. Trial `i` uses the
/// same sampling seeds for every grid value.
pub fn sweep_lambda_max(
    policy: &Policy,
    values: &[f64],
    val: &[Demonstration],
    pairs: &[(usize, usize)],
    trials: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<SweepTable, DiffusionError> {
    let jobs: Vec<(f64, usize)> = values
        .iter()
        .flat_map(|&l| (0..trials).map(move |t| (l, t)))
        .collect();
    let rows = map_indexed(mode, &jobs, |_, &(lambda_max, trial)| {
        let guidance = policy.guidance.with_lambda_max(lambda_max);
        let mse = chunk_mse(
            policy,
            val,
            pairs,
            &guidance,
            SampleMode::Guided { null_step: false },
            derive_seed(seed, "sweep", trial as u64),
        )?;
        Ok(SweepRow {
            lambda_max,
            trial,
            mse,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, DiffusionError>>()?;
    Ok(SweepTable { rows })
}
