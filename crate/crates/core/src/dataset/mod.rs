//! Demonstrations, observation windows, action chunks, normalization and the
//! on-disk dataset format.

mod batch;
mod io;
mod stats;

pub use batch::{sample_batch, Batch};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DatasetFile, DATA_MAGIC};
pub use stats::{compute_norm_stats, step_feature, NormStats, STD_FLOOR};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::env::{
    is_success, run_expert, EnvState, EpisodeConfig, Trajectory, ACTION_DIM, ENV_FEATURE_DIM,
};
use crate::par::{map_indexed, ExecMode};
use crate::rng::stream_rng;

pub const OBS_HORIZON: usize = 2;
pub const ACTION_HORIZON: usize = 8;
pub const JOINT_STATE_DIM: usize = 7;
pub const FRAME_DIM: usize = ENV_FEATURE_DIM + JOINT_STATE_DIM;
pub const OBS_DIM: usize = OBS_HORIZON * FRAME_DIM;
pub const CHUNK_DIM: usize = ACTION_HORIZON * ACTION_DIM;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("expert failed on seed {seed}: cycles={cycles} success={success}")]
    ExpertFailure { seed: u64, cycles: u32, success: bool },
    #[error("split with fraction {fraction} of {n} demos leaves an empty side")]
    EmptySplit { fraction: f64, n: usize },
    #[error("cannot compute statistics of an empty training set")]
    EmptyTrainingSet,
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub env_features: [f64; ENV_FEATURE_DIM],
    pub joint_state: [f64; JOINT_STATE_DIM],
    pub timestep: u32,
}

impl Frame {
    pub fn from_state(state: &EnvState) -> Self {
        let q = |v: f64| f64::from(v as f32);
        Self {
            env_features: state.workpiece.map(q),
            joint_state: state.joint_state().map(q),
            timestep: state.step_count,
        }
    }

    pub fn features(&self) -> [f64; FRAME_DIM] {
        let mut out = [0.0; FRAME_DIM];
        out[..ENV_FEATURE_DIM].copy_from_slice(&self.env_features);
        out[ENV_FEATURE_DIM..].copy_from_slice(&self.joint_state);
        out
    }
}

/// One expert episode. `frames[t]` is the observation before `actions[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub seed: u64,
    pub frames: Vec<Frame>,
    pub actions: Vec<[f64; ACTION_DIM]>,
}

impl Demonstration {
    pub fn from_trajectory(seed: u64, traj: &Trajectory) -> Self {
        Self {
            seed,
            frames: traj.states[..traj.len()].iter().map(Frame::from_state).collect(),
            actions: traj.actions.iter().map(|a| a.0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn window(&self, t: usize) -> ObservationWindow {
        let prev = &self.frames[t.saturating_sub(1)];
        ObservationWindow::from_frames(prev, &self.frames[t], t as f64)
    }

    /// Actions `t..t+ACTION_HORIZON`, tail-padded with the final action.
    pub fn chunk(&self, t: usize) -> ActionChunk {
        let last = self.actions.len() - 1;
        let mut actions = [[0.0; ACTION_DIM]; ACTION_HORIZON];
        for (i, row) in actions.iter_mut().enumerate() {
            *row = self.actions[(t + i).min(last)];
        }
        ActionChunk {
            actions,
            normalized: false,
        }
    }
}

/// Last `OBS_HORIZON` frames (oldest first) plus the timestep count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationWindow {
    pub frames: [[f64; FRAME_DIM]; OBS_HORIZON],
    pub s_t: f64,
    pub normalized: bool,
}

impl ObservationWindow {
    pub fn from_frames(prev: &Frame, current: &Frame, s_t: f64) -> Self {
        Self {
            frames: [prev.features(), current.features()],
            s_t,
            normalized: false,
        }
    }

    /// Window for live control: the first frame is duplicated at episode
    /// start.
    pub fn from_states(prev: Option<&EnvState>, current: &EnvState) -> Self {
        let cur = Frame::from_state(current);
        let prev = prev.map(Frame::from_state).unwrap_or(cur);
        Self::from_frames(&prev, &cur, f64::from(current.step_count))
    }

    pub fn flat(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        for (i, f) in self.frames.iter().enumerate() {
            out[i * FRAME_DIM..(i + 1) * FRAME_DIM].copy_from_slice(f);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionChunk {
    pub actions: [[f64; ACTION_DIM]; ACTION_HORIZON],
    pub normalized: bool,
}

impl ActionChunk {
    pub fn flat(&self) -> [f64; CHUNK_DIM] {
        let mut out = [0.0; CHUNK_DIM];
        for (i, a) in self.actions.iter().enumerate() {
            out[i * ACTION_DIM..(i + 1) * ACTION_DIM].copy_from_slice(a);
        }
        out
    }

    pub fn from_flat(flat: &[f64], normalized: bool) -> Self {
        assert_eq!(flat.len(), CHUNK_DIM, "chunk length");
        let mut actions = [[0.0; ACTION_DIM]; ACTION_HORIZON];
        for (i, row) in actions.iter_mut().enumerate() {
            row.copy_from_slice(&flat[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
        }
        Self {
            actions,
            normalized,
        }
    }
}

/// Runs the expert on seeds `seed_base..seed_base + n`.
pub fn generate_demos(
    n: usize,
    seed_base: u64,
    cfg: &EpisodeConfig,
    mode: ExecMode,
) -> Result<Vec<Demonstration>, DatasetError> {
    let seeds: Vec<u64> = (0..n as u64).map(|i| seed_base + i).collect();
    map_indexed(mode, &seeds, |_, &seed| {
        let traj = run_expert(seed, cfg);
        let v = is_success(&traj, cfg);
        if !v.success || v.repetitive != 0 {
            return Err(DatasetError::ExpertFailure {
                seed,
                cycles: v.cycles_done,
                success: v.success,
            });
        }
        Ok(Demonstration::from_trajectory(seed, &traj))
    })
    .into_iter()
    .collect()
}

/// Seeded shuffle, then the first `round(n * train_fraction)` demos train.
pub fn split(
    demos: &[Demonstration],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Demonstration>, Vec<Demonstration>), DatasetError> {
    let n = demos.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if !(train_fraction > 0.0 && train_fraction < 1.0) || n_train == 0 || n_train >= n {
        return Err(DatasetError::EmptySplit {
            fraction: train_fraction,
            n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, "split", 0));
    let train = order[..n_train].iter().map(|&i| demos[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| demos[i].clone()).collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demos(n: usize) -> Vec<Demonstration> {
        generate_demos(n, 100, &EpisodeConfig::default(), ExecMode::Sequential).unwrap()
    }

    #[test]
    fn demo_shapes_and_timesteps() {
        for d in demos(3) {
            assert_eq!(d.frames.len(), d.actions.len());
            for (i, f) in d.frames.iter().enumerate() {
                assert_eq!(f.timestep as usize, i);
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = EpisodeConfig::default();
        let a = generate_demos(1, 5, &cfg, ExecMode::Sequential).unwrap();
        let b = generate_demos(1, 5, &cfg, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_hundred_demos_have_expected_length() {
        let d = generate_demos(200, 0, &EpisodeConfig::default(), ExecMode::Parallel).unwrap();
        assert_eq!(d.len(), 200);
        let mean = d.iter().map(|x| x.len() as f64).sum::<f64>() / 200.0;
        assert!((150.0..=200.0).contains(&mean), "mean length {mean}");
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let all = demos(10);
        let (tr, va) = split(&all, 0.8, 3).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let (tr2, va2) = split(&all, 0.8, 3).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        let mut seeds: Vec<u64> = tr.iter().chain(&va).map(|d| d.seed).collect();
        seeds.sort_unstable();
        assert_eq!(seeds, (100..110).collect::<Vec<_>>());
    }

    #[test]
    fn split_of_two_hundred() {
        let fake: Vec<Demonstration> = (0..200)
            .map(|s| Demonstration {
                seed: s,
                frames: vec![],
                actions: vec![],
            })
            .collect();
        let (tr, va) = split(&fake, 0.8, 0).unwrap();
        assert_eq!((tr.len(), va.len()), (160, 40));
    }

    #[test]
    fn split_rejects_empty_side() {
        let all = demos(2);
        assert!(split(&all, 0.1, 0).is_err());
        assert!(split(&all, 1.0, 0).is_err());
    }

    #[test]
    fn window_pads_at_start_and_chunk_pads_at_end() {
        let d = &demos(1)[0];
        let w = d.window(0);
        assert_eq!(w.frames[0], w.frames[1]);
        assert_eq!(w.s_t, 0.0);
        let w5 = d.window(5);
        assert_eq!(w5.frames[0], d.frames[4].features());
        assert_eq!(w5.s_t, 5.0);

        let last = d.len() - 1;
        let c = d.chunk(last);
        for row in &c.actions[1..] {
            assert_eq!(*row, d.actions[last]);
        }
        let c = d.chunk(3);
        for (i, row) in c.actions.iter().enumerate() {
            assert_eq!(*row, d.actions[3 + i]);
        }
    }

    #[test]
    fn chunk_flat_round_trip() {
        let d = &demos(1)[0];
        let c = d.chunk(10);
        assert_eq!(ActionChunk::from_flat(&c.flat(), false), c);
    }
}
