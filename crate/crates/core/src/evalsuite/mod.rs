//! Closed-loop rollouts, success metrics, termination-step statistics,
//! conditional-entropy curves and the λ_max sweep.

mod entropy;
mod report;
mod sweep;
mod termination;

pub use entropy::{
    action_entropies, bin_index, conditional_entropy, histogram_entropy, ChunkSampler,
    EntropyCurve, EntropyPoint, PolicySampler, ENTROPY_BINS, ENTROPY_RANGE, MC_SAMPLES,
};
pub use report::{
    entropy_csv, metrics_csv, sweep_csv, termination_csv, write_csv_file, ReportError,
};
pub use sweep::{sweep_lambda_max, SweepRow, SweepTable, DEFAULT_SWEEP_GRID, DEFAULT_TRIALS};
pub use termination::{
    termination_distribution, TerminationError, TerminationStats, MIN_RECORDS,
    TERMINATION_BIN_WIDTH,
};

use std::fmt;

use crate::dataset::ObservationWindow;
use crate::diffusion::{GuidanceConfig, Policy, SampleMode};
use crate::env::{env_reset, is_success, is_terminal, Action, EpisodeConfig, Trajectory};
use crate::par::{map_indexed, ExecMode};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    CfgDp,
    NoCfg,
    NoStep,
    DpBaseline,
}

/// Which trained network a variant samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    /// Trained with step-token dropout.
    Cfg,
    /// Trained with the step token always nulled.
    NoStep,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::CfgDp,
        Variant::NoCfg,
        Variant::NoStep,
        Variant::DpBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CfgDp => "CFG_DP",
            Variant::NoCfg => "NO_CFG",
            Variant::NoStep => "NO_STEP",
            Variant::DpBaseline => "DP_BASELINE",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Self::ALL.into_iter().find(|v| v.name() == name.trim())
    }

    pub fn valid_names() -> String {
        Self::ALL.map(Variant::name).join(", ")
    }

    pub fn mode(self) -> SampleMode {
        match self {
            Variant::CfgDp => SampleMode::Guided { null_step: false },
            Variant::NoStep => SampleMode::Guided { null_step: true },
            Variant::NoCfg | Variant::DpBaseline => SampleMode::Unconditional,
        }
    }

    pub fn checkpoint(self) -> CheckpointKind {
        match self {
            Variant::CfgDp | Variant::NoCfg => CheckpointKind::Cfg,
            Variant::NoStep | Variant::DpBaseline => CheckpointKind::NoStep,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantSpec {
    pub variant: Variant,
    pub lambda_max: Option<f64>,
}

impl VariantSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            lambda_max: None,
        }
    }

    pub fn with_lambda_max(self, lambda_max: f64) -> Self {
        Self {
            lambda_max: Some(lambda_max),
            ..self
        }
    }

    pub fn guidance(&self, policy: &Policy) -> GuidanceConfig {
        match self.lambda_max {
            Some(l) => policy.guidance.with_lambda_max(l),
            None => policy.guidance,
        }
    }
}

/// The two trained networks every variant draws from.
#[derive(Debug, Clone, Copy)]
pub struct PolicyPair<'a> {
    pub cfg: &'a Policy,
    pub nostep: &'a Policy,
}

impl<'a> PolicyPair<'a> {
    pub fn for_variant(&self, variant: Variant) -> &'a Policy {
        match variant.checkpoint() {
            CheckpointKind::Cfg => self.cfg,
            CheckpointKind::NoStep => self.nostep,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub seed: u64,
    pub trajectory: Trajectory,
    /// λ used to sample the chunk each executed action came from.
    pub lambdas: Vec<f64>,
    pub termination_step: u32,
    pub cycles_done: u32,
    pub success: bool,
    pub repetitive: u32,
    pub completion_time: f64,
    /// Set when the policy produced a non-finite chunk or action.
    pub failure: Option<String>,
}

/// Runs one closed-loop episode, replanning after every full chunk.
pub fn rollout(
    policy: &Policy,
    spec: &VariantSpec,
    cfg: &EpisodeConfig,
    seed: u64,
) -> RolloutRecord {
    let guidance = spec.guidance(policy);
    let mode = spec.variant.mode();
    let mut traj = Trajectory::new(env_reset(seed));
    let mut lambdas = Vec::new();
    let mut failure = None;
    let mut replan = 0u64;
    'episode: while !is_terminal(traj.last(), cfg) {
        let n = traj.states.len();
        let prev = (n >= 2).then(|| &traj.states[n - 2]);
        let window = ObservationWindow::from_states(prev, traj.last());
        let chunk_seed = derive_seed(seed, "rollout", replan);
        replan += 1;
        let (chunk, lambda) = match policy.sample_chunk(&window, &guidance, mode, chunk_seed) {
            Ok(out) => out,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        for a in chunk.actions {
            if let Err(e) = traj.push(Action(a)) {
                failure = Some(e.to_string());
                break 'episode;
            }
            lambdas.push(lambda);
            if is_terminal(traj.last(), cfg) {
                break;
            }
        }
    }
    let verdict = is_success(&traj, cfg);
    RolloutRecord {
        seed,
        trajectory: traj,
        lambdas,
        termination_step: verdict.termination_step,
        cycles_done: verdict.cycles_done,
        success: verdict.success && failure.is_none(),
        repetitive: verdict.repetitive,
        completion_time: verdict.completion_time,
        failure,
    }
}

/// Rollouts over `seeds`, returned in seed order.
pub fn evaluate(
    policy: &Policy,
    spec: &VariantSpec,
    cfg: &EpisodeConfig,
    seeds: &[u64],
    mode: ExecMode,
) -> Vec<RolloutRecord> {
    let mut records = map_indexed(mode, seeds, |_, &s| rollout(policy, spec, cfg, s));
    records.sort_by_key(|r| r.seed);
    records
}

/// Environment seeds shared by every variant in an evaluation.
pub fn eval_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(base, "eval-env", i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub n: usize,
    pub success_rate: f64,
    pub repetitive_mean: f64,
    /// Mean over successful rollouts; NaN when none succeeded.
    pub completion_time_mean: f64,
    pub failures: usize,
}

pub fn summarize(records: &[RolloutRecord]) -> Metrics {
    let n = records.len();
    let successes: Vec<&RolloutRecord> = records.iter().filter(|r| r.success).collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>, len: usize| {
        if len == 0 {
            f64::NAN
        } else {
            xs.sum::<f64>() / len as f64
        }
    };
    Metrics {
        n,
        success_rate: if n == 0 {
            f64::NAN
        } else {
            successes.len() as f64 / n as f64
        },
        repetitive_mean: mean(&mut records.iter().map(|r| f64::from(r.repetitive)), n),
        completion_time_mean: mean(
            &mut successes.iter().map(|r| r.completion_time),
            successes.len(),
        ),
        failures: records.iter().filter(|r| r.failure.is_some()).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_norm_stats, generate_demos};
    use crate::diffusion::{
        lambda_at, DdimPlan, NoiseSchedule, PolicyParams, DEFAULT_LAMBDA_MAX, DEFAULT_S_T0_FRACTION,
    };
    use crate::rng::stream_rng;

    pub(crate) fn tiny_policy(seed: u64) -> Policy {
        let cfg = EpisodeConfig::default();
        let demos = generate_demos(4, 50, &cfg, ExecMode::Parallel).unwrap();
        let stats = compute_norm_stats(&demos).unwrap();
        let schedule = NoiseSchedule::default();
        let plan = DdimPlan::uniform(schedule.steps, 10).unwrap();
        let guidance =
            GuidanceConfig::from_mean_length(DEFAULT_LAMBDA_MAX, stats.s_mean, DEFAULT_S_T0_FRACTION)
                .unwrap();
        Policy {
            params: PolicyParams::init(&mut stream_rng(seed, "init", 0)),
            stats,
            schedule,
            plan,
            guidance,
        }
    }

    fn short_cfg() -> EpisodeConfig {
        EpisodeConfig {
            max_steps: 30,
            ..EpisodeConfig::default()
        }
    }

    fn record(success: bool, repetitive: u32, step: u32) -> RolloutRecord {
        RolloutRecord {
            seed: 0,
            trajectory: Trajectory::new(env_reset(0)),
            lambdas: Vec::new(),
            termination_step: step,
            cycles_done: 2 + repetitive,
            success,
            repetitive,
            completion_time: f64::from(step) / 10.0,
            failure: None,
        }
    }

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_name(v.name()), Some(v));
        }
        assert_eq!(Variant::from_name("CFG"), None);
        assert_eq!(Variant::valid_names(), "CFG_DP, NO_CFG, NO_STEP, DP_BASELINE");
    }

    #[test]
    fn zero_lambda_guided_matches_unconditional_rollout() {
        let p = tiny_policy(1);
        let cfg = short_cfg();
        let a = rollout(&p, &VariantSpec::new(Variant::CfgDp).with_lambda_max(0.0), &cfg, 5);
        let b = rollout(&p, &VariantSpec::new(Variant::NoCfg).with_lambda_max(0.0), &cfg, 5);
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn rollout_is_deterministic() {
        let p = tiny_policy(2);
        let spec = VariantSpec::new(Variant::CfgDp);
        assert_eq!(rollout(&p, &spec, &short_cfg(), 9), rollout(&p, &spec, &short_cfg(), 9));
    }

    #[test]
    fn recorded_lambdas_match_schedule() {
        let p = tiny_policy(3);
        let r = rollout(&p, &VariantSpec::new(Variant::CfgDp), &short_cfg(), 4);
        assert_eq!(r.lambdas.len(), r.trajectory.len());
        for (i, l) in r.lambdas.iter().enumerate() {
            let replan_step = (i / 8 * 8) as f64;
            assert!((l - lambda_at(&p.guidance, replan_step)).abs() < 1e-12);
        }
    }

    #[test]
    fn record_invariants_hold() {
        let p = tiny_policy(4);
        let cfg = short_cfg();
        let r = rollout(&p, &VariantSpec::new(Variant::NoStep), &cfg, 1);
        assert_eq!(r.completion_time, f64::from(r.termination_step) / 10.0);
        assert_eq!(r.repetitive, r.cycles_done.saturating_sub(cfg.required_cycles));
        assert!(r.termination_step <= cfg.max_steps);
    }

    #[test]
    fn evaluate_modes_agree() {
        let p = tiny_policy(5);
        let seeds = eval_seeds(3, 4);
        let spec = VariantSpec::new(Variant::DpBaseline);
        let a = evaluate(&p, &spec, &short_cfg(), &seeds, ExecMode::Sequential);
        let b = evaluate(&p, &spec, &short_cfg(), &seeds, ExecMode::Parallel);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].seed <= w[1].seed));
    }

    #[test]
    fn summary_of_all_successes() {
        let recs = vec![record(true, 0, 150), record(true, 0, 170)];
        let m = summarize(&recs);
        assert_eq!(m.success_rate, 1.0);
        assert_eq!(m.repetitive_mean, 0.0);
        assert_eq!(m.completion_time_mean, 16.0);
    }

    #[test]
    fn summary_of_mixed_records() {
        let recs = vec![record(true, 0, 150), record(false, 3, 400), record(true, 1, 170)];
        let m = summarize(&recs);
        assert!((m.success_rate - 0.667).abs() < 1e-3);
        assert!((m.repetitive_mean - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.completion_time_mean, 16.0);
        assert_eq!(m.n, 3);
    }

    #[test]
    fn summary_is_order_independent() {
        let mut recs = vec![record(true, 0, 150), record(false, 3, 400), record(true, 1, 170)];
        let a = summarize(&recs);
        recs.reverse();
        assert_eq!(a, summarize(&recs));
    }
}
