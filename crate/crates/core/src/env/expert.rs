//! Scripted expert: approach → grasp → ratchet strokes → release → retract.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{
    is_terminal, env_reset, Action, EnvState, EpisodeConfig, Trajectory, ACTION_DIM, ACTION_LIMIT,
    ARM_JOINTS, HAND, NUM_JOINTS, RETRACT_CENTER, WRIST,
};
use crate::rng::{stream_rng, StreamRng};

const BASE_GRASP: [f64; NUM_JOINTS] = [0.55, 0.35, -0.3, 1.75, 0.4, 0.0];
/// Grasp pose sensitivity to the workpiece offset, one `(dx, dy)` row per joint.
const GRASP_JACOBIAN: [[f64; 2]; NUM_JOINTS] = [
    [3.0, 0.0],
    [0.0, 2.5],
    [-2.0, 1.0],
    [1.5, 1.5],
    [0.0, -2.0],
    [0.0, 0.0],
];

const APPROACH_SPEED: f64 = 0.035;
const RETRACT_SPEED: f64 = 0.05;
const HOLD_LIMIT: f64 = 0.05;
const GRASP_RATE: f64 = 0.025;
const RELEASE_RATE: f64 = 0.04;
const RELEASE_DRIFT: f64 = 0.015;
const ARRIVE_TOL: f64 = 0.02;
const SETTLE_TOL: f64 = 0.05;
const STROKE_AMPLITUDE: f64 = 1.55;
pub const NOMINAL_STROKE_LEN: u32 = 30;
pub const STROKE_JITTER: u32 = 4;
const RETRACT_SPREAD: f64 = 0.04;
pub const ACTION_NOISE_STD: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertPhase {
    Approach,
    Grasp,
    /// `tau` counts steps already taken in stroke number `index` (0-based).
    Stroke { index: u32, tau: u32 },
    Release,
    Retract,
}

/// Per-episode script: phase machine state plus the seeded choices that
/// make demonstrations differ (stroke duration, retract pose, action noise).
#[derive(Debug, Clone)]
pub struct ExpertPlan {
    pub phase: ExpertPhase,
    pub stroke_len: u32,
    pub required_cycles: u32,
    pub retract_target: [f64; ARM_JOINTS],
    noise: StreamRng,
}

impl ExpertPlan {
    pub fn new(seed: u64, cfg: &EpisodeConfig) -> Self {
        let mut rng = stream_rng(seed, "expert-plan", 0);
        let stroke_len = rng.random_range(
            NOMINAL_STROKE_LEN - STROKE_JITTER..=NOMINAL_STROKE_LEN + STROKE_JITTER,
        );
        let mut retract_target = RETRACT_CENTER;
        for q in &mut retract_target {
            *q += rng.random_range(-RETRACT_SPREAD..=RETRACT_SPREAD);
        }
        Self {
            phase: ExpertPhase::Approach,
            stroke_len,
            required_cycles: cfg.required_cycles,
            retract_target,
            noise: stream_rng(seed, "expert-noise", 0),
        }
    }
}

pub fn grasp_pose(workpiece: &[f64; 2]) -> [f64; NUM_JOINTS] {
    let mut g = BASE_GRASP;
    for (q, row) in g.iter_mut().zip(GRASP_JACOBIAN) {
        *q += row[0] * workpiece[0] + row[1] * workpiece[1];
    }
    g
}

fn stroke_profile(tau: u32, len: u32) -> f64 {
    let s = (std::f64::consts::PI * f64::from(tau) / f64::from(len)).sin();
    STROKE_AMPLITUDE * s * s
}

/// Straight-line joint-space move toward `target`, with the largest joint
/// step limited to `speed`.
fn move_toward(q: &[f64], target: &[f64], speed: f64, out: &mut [f64]) {
    let dist = q
        .iter()
        .zip(target)
        .map(|(a, b)| (b - a).abs())
        .fold(0.0, f64::max);
    let scale = if dist > speed { speed / dist } else { 1.0 };
    for ((o, a), b) in out.iter_mut().zip(q).zip(target) {
        *o = (b - a) * scale;
    }
}

fn hold(q: &[f64], target: &[f64], out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(q).zip(target) {
        *o = (b - a).clamp(-HOLD_LIMIT, HOLD_LIMIT);
    }
}

fn advance_phase(state: &EnvState, plan: &mut ExpertPlan) {
    let grasp = grasp_pose(&state.workpiece);
    loop {
        let next = match plan.phase {
            ExpertPhase::Approach => {
                let err = state
                    .joints
                    .iter()
                    .zip(&grasp)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                (err < ARRIVE_TOL).then_some(ExpertPhase::Grasp)
            }
            ExpertPhase::Grasp => (state.hand >= 0.97).then_some(ExpertPhase::Stroke { index: 0, tau: 0 }),
            ExpertPhase::Stroke { index, tau } => {
                if tau >= plan.stroke_len && state.wrist() < SETTLE_TOL {
                    if index + 1 >= plan.required_cycles {
                        Some(ExpertPhase::Release)
                    } else {
                        Some(ExpertPhase::Stroke { index: index + 1, tau: 0 })
                    }
                } else {
                    None
                }
            }
            ExpertPhase::Release => (state.hand <= 0.02).then_some(ExpertPhase::Retract),
            ExpertPhase::Retract => None,
        };
        match next {
            Some(p) => plan.phase = p,
            None => break,
        }
    }
}

fn retract_pose(plan: &ExpertPlan) -> [f64; NUM_JOINTS] {
    let mut target = [0.0; NUM_JOINTS];
    target[..ARM_JOINTS].copy_from_slice(&plan.retract_target);
    target
}

/// One expert action for `state`. Advances the plan's phase machine.
pub fn expert_policy(state: &EnvState, plan: &mut ExpertPlan) -> Action {
    advance_phase(state, plan);
    let grasp = grasp_pose(&state.workpiece);
    let mut a = [0.0; ACTION_DIM];
    match plan.phase {
        ExpertPhase::Approach => {
            move_toward(&state.joints, &grasp, APPROACH_SPEED, &mut a[..NUM_JOINTS]);
            a[HAND] = -state.hand;
        }
        ExpertPhase::Grasp => {
            hold(&state.joints, &grasp, &mut a[..NUM_JOINTS]);
            a[HAND] = GRASP_RATE.min(1.0 - state.hand);
        }
        ExpertPhase::Stroke { index, tau } => {
            hold(&state.joints, &grasp, &mut a[..NUM_JOINTS]);
            let tau = (tau + 1).min(plan.stroke_len);
            plan.phase = ExpertPhase::Stroke { index, tau };
            a[WRIST] = stroke_profile(tau, plan.stroke_len) - state.wrist();
            a[HAND] = (1.0 - state.hand).min(HOLD_LIMIT);
        }
        ExpertPhase::Release => {
            move_toward(&state.joints, &retract_pose(plan), RELEASE_DRIFT, &mut a[..NUM_JOINTS]);
            a[HAND] = -RELEASE_RATE.min(state.hand);
        }
        ExpertPhase::Retract => {
            move_toward(&state.joints, &retract_pose(plan), RETRACT_SPEED, &mut a[..NUM_JOINTS]);
            a[HAND] = -state.hand;
        }
    }
    let noise = Normal::new(0.0, ACTION_NOISE_STD).expect("valid std");
    for v in &mut a {
        *v += noise.sample(&mut plan.noise);
        // Recorded at single precision.
        *v = f64::from(v.clamp(-ACTION_LIMIT, ACTION_LIMIT) as f32);
    }
    Action(a)
}

/// Runs the expert from `env_reset(seed)` until the episode terminates.
pub fn run_expert(seed: u64, cfg: &EpisodeConfig) -> Trajectory {
    let mut plan = ExpertPlan::new(seed, cfg);
    let mut traj = Trajectory::new(env_reset(seed));
    while !is_terminal(traj.last(), cfg) {
        let a = expert_policy(traj.last(), &mut plan);
        traj.push(a).expect("expert actions are finite");
    }
    traj
}
