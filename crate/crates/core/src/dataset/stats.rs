use serde::{Deserialize, Serialize};

use super::{
    ActionChunk, DatasetError, Demonstration, ObservationWindow, ACTION_HORIZON, FRAME_DIM,
};
use crate::env::ACTION_DIM;

pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension z-score statistics from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub obs_mean: [f64; FRAME_DIM],
    pub obs_std: [f64; FRAME_DIM],
    pub act_mean: [f64; ACTION_DIM],
    pub act_std: [f64; ACTION_DIM],
    /// Mean demonstration length in steps.
    pub s_mean: f64,
}

fn moments<const D: usize>(rows: impl Iterator<Item = [f64; D]>) -> ([f64; D], [f64; D]) {
    let mut n = 0usize;
    let mut sum = [0.0; D];
    let rows: Vec<[f64; D]> = rows.collect();
    for r in &rows {
        n += 1;
        for d in 0..D {
            sum[d] += r[d];
        }
    }
    let mean = sum.map(|s| s / n as f64);
    let mut var = [0.0; D];
    for r in &rows {
        for d in 0..D {
            var[d] += (r[d] - mean[d]).powi(2);
        }
    }
    let std = var.map(|v| (v / n as f64).sqrt().max(STD_FLOOR));
    (mean, std)
}

pub fn compute_norm_stats(train: &[Demonstration]) -> Result<NormStats, DatasetError> {
    let total: usize = train.iter().map(Demonstration::len).sum();
    if train.is_empty() || total == 0 {
        return Err(DatasetError::EmptyTrainingSet);
    }
    let (obs_mean, obs_std) = moments(train.iter().flat_map(|d| d.frames.iter().map(|f| f.features())));
    let (act_mean, act_std) = moments(train.iter().flat_map(|d| d.actions.iter().copied()));
    for (d, s) in obs_std.iter().chain(&act_std).enumerate() {
        if *s == STD_FLOOR {
            log::warn!("dimension {d} is degenerate; std floored at {STD_FLOOR}");
        }
    }
    Ok(NormStats {
        obs_mean,
        obs_std,
        act_mean,
        act_std,
        s_mean: total as f64 / train.len() as f64,
    })
}

/// Timestep feature fed to the network: the step count in units of the mean
/// demonstration length.
pub fn step_feature(s_t: f64, stats: &NormStats) -> f64 {
    s_t / stats.s_mean
}

impl NormStats {
    pub fn normalize_window(&self, w: &ObservationWindow) -> ObservationWindow {
        if w.normalized {
            return *w;
        }
        let mut out = *w;
        for f in &mut out.frames {
            for d in 0..FRAME_DIM {
                f[d] = (f[d] - self.obs_mean[d]) / self.obs_std[d];
            }
        }
        out.normalized = true;
        out
    }

    pub fn denormalize_window(&self, w: &ObservationWindow) -> ObservationWindow {
        if !w.normalized {
            return *w;
        }
        let mut out = *w;
        for f in &mut out.frames {
            for d in 0..FRAME_DIM {
                f[d] = f[d] * self.obs_std[d] + self.obs_mean[d];
            }
        }
        out.normalized = false;
        out
    }

    pub fn normalize_action(&self, a: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|d| (a[d] - self.act_mean[d]) / self.act_std[d])
    }

    pub fn denormalize_action(&self, a: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|d| a[d] * self.act_std[d] + self.act_mean[d])
    }

    pub fn normalize_chunk(&self, c: &ActionChunk) -> ActionChunk {
        if c.normalized {
            return *c;
        }
        let mut actions = c.actions;
        for row in actions.iter_mut().take(ACTION_HORIZON) {
            *row = self.normalize_action(row);
        }
        ActionChunk {
            actions,
            normalized: true,
        }
    }

    pub fn denormalize_chunk(&self, c: &ActionChunk) -> ActionChunk {
        if !c.normalized {
            return *c;
        }
        let mut actions = c.actions;
        for row in actions.iter_mut() {
            *row = self.denormalize_action(row);
        }
        ActionChunk {
            actions,
            normalized: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_demos, Frame};
    use crate::env::EpisodeConfig;
    use crate::par::ExecMode;
    use proptest::prelude::*;

    fn synthetic(len: usize, action: [f64; ACTION_DIM]) -> Demonstration {
        Demonstration {
            seed: 0,
            frames: (0..len)
                .map(|t| Frame {
                    env_features: [0.01, 0.02],
                    joint_state: [t as f64; 7],
                    timestep: t as u32,
                })
                .collect(),
            actions: vec![action; len],
        }
    }

    #[test]
    fn constant_actions_hit_the_floor() {
        let s = compute_norm_stats(&[synthetic(20, [0.1; ACTION_DIM])]).unwrap();
        assert!(s.act_std.iter().all(|&v| v == STD_FLOOR));
        assert!(s.act_mean.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn s_mean_is_mean_length() {
        let s = compute_norm_stats(&[synthetic(100, [0.0; 7]), synthetic(200, [0.0; 7])]).unwrap();
        assert_eq!(s.s_mean, 150.0);
        assert_eq!(step_feature(75.0, &s), 0.5);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(compute_norm_stats(&[]).is_err());
    }

    /// Welford streaming recomputation.
    #[test]
    fn matches_streaming_oracle() {
        let demos = generate_demos(4, 40, &EpisodeConfig::default(), ExecMode::Sequential).unwrap();
        let s = compute_norm_stats(&demos).unwrap();
        let (mut n, mut mean, mut m2) = (0.0f64, [0.0f64; ACTION_DIM], [0.0f64; ACTION_DIM]);
        for a in demos.iter().flat_map(|d| d.actions.iter()) {
            n += 1.0;
            for d in 0..ACTION_DIM {
                let delta = a[d] - mean[d];
                mean[d] += delta / n;
                m2[d] += delta * (a[d] - mean[d]);
            }
        }
        for d in 0..ACTION_DIM {
            assert!((mean[d] - s.act_mean[d]).abs() < 1e-10);
            assert!(((m2[d] / n).sqrt().max(STD_FLOOR) - s.act_std[d]).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn normalize_round_trip(vals in prop::collection::vec(-5.0f64..5.0, 7), seed in 0u64..4) {
            let demos = generate_demos(1, seed, &EpisodeConfig::default(), ExecMode::Sequential).unwrap();
            let s = compute_norm_stats(&demos).unwrap();
            let a: [f64; 7] = vals.try_into().unwrap();
            let back = s.denormalize_action(&s.normalize_action(&a));
            for d in 0..7 {
                prop_assert!((back[d] - a[d]).abs() < 1e-10);
            }
            let w = demos[0].window(3);
            let wb = s.denormalize_window(&s.normalize_window(&w));
            for (f, g) in wb.frames.iter().flatten().zip(w.frames.iter().flatten()) {
                prop_assert!((f - g).abs() < 1e-10);
            }
        }
    }
}
