use serde::Serialize;

use crate::dataset::{Demonstration, ObservationWindow};
use crate::diffusion::{DiffusionError, GuidanceConfig, Policy, SampleMode};
use crate::env::ACTION_DIM;
use crate::par::{map_indexed, ExecMode};
use crate::rng::derive_seed;

pub const MC_SAMPLES: usize = 100;
pub const ENTROPY_BINS: usize = 100;
pub const ENTROPY_RANGE: f64 = 3.0;

/// Draws normalized first actions of sampled chunks.
pub trait ChunkSampler: Sync {
    fn first_actions(
        &self,
        window: &ObservationWindow,
        seeds: &[u64],
    ) -> Result<Vec<[f64; ACTION_DIM]>, DiffusionError>;
}

/// A policy sampled under one variant's guidance settings.
pub struct PolicySampler<'a> {
    pub policy: &'a Policy,
    pub guidance: GuidanceConfig,
    pub mode: SampleMode,
}

impl ChunkSampler for PolicySampler<'_> {
    fn first_actions(
        &self,
        window: &ObservationWindow,
        seeds: &[u64],
    ) -> Result<Vec<[f64; ACTION_DIM]>, DiffusionError> {
        let windows = vec![*window; seeds.len()];
        let (chunks, _) = self
            .policy
            .sample_chunks(&windows, seeds, &self.guidance, self.mode)?;
        Ok(chunks
            .iter()
            .map(|c| self.policy.stats.normalize_action(&c.actions[0]))
            .collect())
    }
}

/// Bin index over `[-ENTROPY_RANGE, ENTROPY_RANGE]`; values outside fall
/// into the edge bins.
pub fn bin_index(v: f64) -> usize {
    let u = (v + ENTROPY_RANGE) / (2.0 * ENTROPY_RANGE) * ENTROPY_BINS as f64;
    if u.is_nan() || u < 0.0 {
        0
    } else {
        (u as usize).min(ENTROPY_BINS - 1)
    }
}

/// Coverage-adjusted (Chao–Shen) entropy in nats of binned samples,
/// clamped to `[0, ln(bins)]`.
pub fn histogram_entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let mut singletons = counts.iter().filter(|&&c| c == 1).count();
    if singletons == n {
        singletons = n - 1;
    }
    let coverage = 1.0 - singletons as f64 / nf;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let pa = coverage * c as f64 / nf;
            -pa * pa.ln() / (1.0 - (1.0 - pa).powf(nf))
        })
        .sum();
    h.clamp(0.0, (counts.len() as f64).ln())
}

/// Per-dimension entropies of a set of normalized actions.
pub fn action_entropies(actions: &[[f64; ACTION_DIM]]) -> [f64; ACTION_DIM] {
    std::array::from_fn(|d| {
        let mut counts = [0usize; ENTROPY_BINS];
        for a in actions {
            counts[bin_index(a[d])] += 1;
        }
        histogram_entropy(&counts)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyPoint {
    pub timestep: usize,
    /// Mean over action dimensions, nats.
    pub entropy: f64,
    pub per_dim: [f64; ACTION_DIM],
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntropyCurve {
    pub points: Vec<EntropyPoint>,
}

impl EntropyCurve {
    fn mean_over(&self, range: std::ops::Range<usize>) -> f64 {
        let sel: Vec<f64> = self
            .points
            .iter()
            .filter(|p| range.contains(&p.timestep))
            .map(|p| p.entropy)
            .collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    }

    fn last_timestep(&self) -> usize {
        self.points.iter().map(|p| p.timestep).max().unwrap_or(0)
    }

    /// Mean entropy over the final `width` probe timesteps.
    pub fn late_mean(&self, width: usize) -> f64 {
        let end = self.last_timestep() + 1;
        self.mean_over(end.saturating_sub(width)..end)
    }

    /// Mean entropy over a `width`-step window centred on the probe midpoint.
    pub fn mid_mean(&self, width: usize) -> f64 {
        let mid = (self.last_timestep() + 1) / 2;
        let start = mid.saturating_sub(width / 2);
        self.mean_over(start..start + width)
    }
}

/// Monte-Carlo conditional entropy of the first action at each probe
/// timestep in `timesteps`, using `samples` chunks with distinct seeds.
pub fn conditional_entropy<S: ChunkSampler>(
    sampler: &S,
    probe: &Demonstration,
    timesteps: &[usize],
    samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<EntropyCurve, DiffusionError> {
    let points = map_indexed(mode, timesteps, |_, &t| {
        let window = probe.window(t);
        let seeds: Vec<u64> = (0..samples as u64)
            .map(|i| derive_seed(seed, "mc", (t as u64) << 32 | i))
            .collect();
        let actions = sampler.first_actions(&window, &seeds)?;
        let per_dim = action_entropies(&actions);
        Ok::<_, DiffusionError>(EntropyPoint {
            timestep: t,
            entropy: per_dim.iter().sum::<f64>() / ACTION_DIM as f64,
            per_dim,
            samples,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(EntropyCurve { points })
}
