//! Deterministic "cyclic latch" simulator standing in for a ratchet-screwing
//! task.
//!
//! The arm has six joints (the last one is the wrist rotation that drives
//! the ratchet) plus a one-dimensional hand closure. A ratchet stroke is a
//! wrist excursion from below [`STROKE_LOW`] past [`STROKE_HIGH`] and back,
//! performed with the hand closed. An episode ends when the arm retracts into
//! the end-zone, a ball around [`RETRACT_CENTER`] in the space of the first
//! five joints.
//!
//! The observation interface mirrors the real task: a 2-D "visual" feature
//! (the workpiece offset), 7-D proprioception (6 joints + hand) and 7-D
//! actions (6 joint-position deltas + hand delta) at 10 Hz.

mod cycle;
mod expert;

pub use cycle::{detect_cycle, CycleDetector};
pub use expert::{
    grasp_pose,
    expert_policy, run_expert, ExpertPhase, ExpertPlan, ACTION_NOISE_STD, NOMINAL_STROKE_LEN,
    STROKE_JITTER,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

pub const NUM_JOINTS: usize = 6;
pub const ARM_JOINTS: usize = 5;
pub const WRIST: usize = 5;
pub const ACTION_DIM: usize = 7;
pub const HAND: usize = 6;
pub const ENV_FEATURE_DIM: usize = 2;
/// Per-dimension action bound (radians / closure units per step).
pub const ACTION_LIMIT: f64 = 0.15;

pub const STROKE_LOW: f64 = 0.1;
pub const STROKE_HIGH: f64 = 1.4;
pub const GRIP_CLOSED: f64 = 0.8;

pub const HOME_POSE: [f64; NUM_JOINTS] = [0.0, -0.3, 0.0, 0.9, 0.0, 0.0];
pub const HOME_JITTER: f64 = 0.05;
pub const WORKPIECE_SIZE: f64 = 0.1;
pub const RETRACT_CENTER: [f64; ARM_JOINTS] = [1.25, 0.85, -0.3, 2.05, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("non-finite action component {index}")]
    NonFiniteAction { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub required_cycles: u32,
    pub max_steps: u32,
    /// Arm-extension distance to [`RETRACT_CENTER`] below which the arm is
    /// inside the end-zone.
    pub end_zone_threshold: f64,
    pub control_hz: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            required_cycles: 2,
            max_steps: 400,
            end_zone_threshold: 0.12,
            control_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action(pub [f64; ACTION_DIM]);

impl Action {
    pub const ZERO: Action = Action([0.0; ACTION_DIM]);

    pub fn clamped(&self) -> Action {
        Action(self.0.map(|v| v.clamp(-ACTION_LIMIT, ACTION_LIMIT)))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub joints: [f64; NUM_JOINTS],
    pub hand: f64,
    pub workpiece: [f64; ENV_FEATURE_DIM],
    pub cycles_done: u32,
    pub step_count: u32,
    detector: CycleDetector,
}

impl EnvState {
    pub fn wrist(&self) -> f64 {
        self.joints[WRIST]
    }

    /// Distance of the first five joints from the retract center.
    pub fn arm_extension(&self) -> f64 {
        self.joints[..ARM_JOINTS]
            .iter()
            .zip(RETRACT_CENTER)
            .map(|(q, c)| (q - c).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn in_end_zone(&self, cfg: &EpisodeConfig) -> bool {
        self.arm_extension() < cfg.end_zone_threshold
    }

    /// Joints followed by the hand closure.
    pub fn joint_state(&self) -> [f64; ACTION_DIM] {
        let mut out = [0.0; ACTION_DIM];
        out[..NUM_JOINTS].copy_from_slice(&self.joints);
        out[HAND] = self.hand;
        out
    }
}

pub fn env_reset(seed: u64) -> EnvState {
    let mut rng = stream_rng(seed, "env-reset", 0);
    let mut joints = HOME_POSE;
    for q in &mut joints {
        *q += rng.random_range(-HOME_JITTER..=HOME_JITTER);
    }
    let workpiece = [
        rng.random_range(0.0..=WORKPIECE_SIZE),
        rng.random_range(0.0..=WORKPIECE_SIZE),
    ];
    let mut detector = CycleDetector::default();
    detector.push(joints[WRIST], 0.0);
    EnvState {
        joints,
        hand: 0.0,
        workpiece,
        cycles_done: 0,
        step_count: 0,
        detector,
    }
}

pub fn env_step(state: &EnvState, action: &Action) -> Result<EnvState, EnvError> {
    if let Some(index) = action.0.iter().position(|v| !v.is_finite()) {
        return Err(EnvError::NonFiniteAction { index });
    }
    let a = action.clamped();
    let mut next = state.clone();
    for (q, d) in next.joints.iter_mut().zip(&a.0[..NUM_JOINTS]) {
        *q += d;
    }
    next.hand = (next.hand + a.0[HAND]).clamp(0.0, 1.0);
    next.detector.push(next.joints[WRIST], next.hand);
    next.cycles_done = next.detector.count();
    next.step_count += 1;
    Ok(next)
}

/// A finished (or truncated) episode: `states[0]` is the reset state and
/// `states[i + 1] = env_step(states[i], actions[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<EnvState>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn new(initial: EnvState) -> Self {
        Self {
            states: vec![initial],
            actions: Vec::new(),
        }
    }

    pub fn last(&self) -> &EnvState {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn push(&mut self, action: Action) -> Result<&EnvState, EnvError> {
        let next = env_step(self.last(), &action)?;
        self.actions.push(action);
        self.states.push(next);
        Ok(self.last())
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Keeps the first `steps` actions.
    pub fn truncated(&self, steps: usize) -> Self {
        let steps = steps.min(self.actions.len());
        Self {
            states: self.states[..=steps].to_vec(),
            actions: self.actions[..steps].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub success: bool,
    pub cycles_done: u32,
    pub repetitive: u32,
    pub termination_step: u32,
    pub completion_time: f64,
}

pub fn is_success(trajectory: &Trajectory, cfg: &EpisodeConfig) -> Verdict {
    let last = trajectory.last();
    let in_zone = last.in_end_zone(cfg);
    let termination_step = last.step_count;
    Verdict {
        success: last.cycles_done >= cfg.required_cycles
            && in_zone
            && last.step_count <= cfg.max_steps,
        cycles_done: last.cycles_done,
        repetitive: last.cycles_done.saturating_sub(cfg.required_cycles),
        termination_step,
        completion_time: f64::from(termination_step) / cfg.control_hz,
    }
}

/// `true` once the episode must stop: the arm is in the end-zone or the step
/// budget is spent.
pub fn is_terminal(state: &EnvState, cfg: &EpisodeConfig) -> bool {
    (state.step_count > 0 && state.in_end_zone(cfg)) || state.step_count >= cfg.max_steps
}
