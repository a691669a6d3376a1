//! Noise-prediction training with conditional dropout, training-curve
//! logging and checkpoints.

mod checkpoint;

pub use checkpoint::{
    checkpoint_digest, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CKPT_MAGIC,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{sample_batch, Demonstration, NormStats, CHUNK_DIM};
use crate::diffusion::{
    ddpm_loss, ddpm_loss_value, DdimPlan, DiffusionError, GuidanceConfig, LossBatch,
    NoiseSchedule, Policy, PolicyParams, SampleMode,
};
use crate::netcore::{AdamConfig, AdamState, NetError};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub grad_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing an item's step condition with the null token.
    pub cond_dropout_p: f64,
    pub seed: u64,
    pub eval_every: u64,
    /// Number of fixed validation `(demo, t)` pairs for the chunk MSE.
    pub val_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grad_steps: 20_000,
            batch_size: 64,
            lr: 1e-4,
            cond_dropout_p: 0.1,
            seed: 0,
            eval_every: 1_000,
            val_pairs: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.grad_steps > 0
            && self.batch_size > 0
            && self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..=1.0).contains(&self.cond_dropout_p)
            && self.eval_every > 0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(*self))
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0:?}")]
    InvalidConfig(TrainConfig),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("numeric failure at step {step}: {source}")]
    Numeric {
        step: u64,
        #[source]
        source: DiffusionError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    /// Validation chunk MSE in normalized units; NaN when no validation set.
    pub val_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "loss", "val_mse"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([r.step.to_string(), r.loss.to_string(), r.val_mse.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Weights and optimizer state after `step` completed updates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: PolicyParams,
    pub adam: AdamState,
    pub step: u64,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig, schedule: &NoiseSchedule) -> Self {
        let params =
            PolicyParams::init(&mut stream_rng(config.seed, "init", 0)).with_skip(schedule);
        let adam = AdamState::new(
            &params,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        Self {
            params,
            adam,
            step: 0,
        }
    }
}

/// Result of [`train`]. On a numeric failure `state` holds the last finite
/// parameters and `failure` the cause.
#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: TrainLog,
    pub failure: Option<TrainError>,
}

/// Everything the training loop reads besides its configuration.
pub struct TrainInputs<'a> {
    pub train: &'a [Demonstration],
    pub val: &'a [Demonstration],
    pub stats: &'a NormStats,
    pub schedule: &'a NoiseSchedule,
    pub plan: &'a DdimPlan,
    pub guidance: &'a GuidanceConfig,
}

/// Evenly spaced `(demo, t)` pairs covering the validation set.
pub fn validation_pairs(val: &[Demonstration], count: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = val
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.len()).map(move |t| (i, t)))
        .collect();
    if all.is_empty() || count == 0 {
        return Vec::new();
    }
    let n = count.min(all.len());
    (0..n).map(|j| all[j * all.len() / n]).collect()
}

/// Mean squared error, in normalized units over whole chunks, between
/// sampled and demonstrated chunks at `pairs`.
pub fn chunk_mse(
    policy: &Policy,
    val: &[Demonstration],
    pairs: &[(usize, usize)],
    guidance: &GuidanceConfig,
    mode: SampleMode,
    seed: u64,
) -> Result<f64, DiffusionError> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let windows: Vec<_> = pairs.iter().map(|&(d, t)| val[d].window(t)).collect();
    let seeds: Vec<u64> = (0..pairs.len() as u64)
        .map(|i| derive_seed(seed, "val-sample", i))
        .collect();
    let (chunks, _) = policy.sample_chunks(&windows, &seeds, guidance, mode)?;
    let mut total = 0.0;
    for (c, &(d, t)) in chunks.iter().zip(pairs) {
        let pred = policy.stats.normalize_chunk(c).flat();
        let truth = policy.stats.normalize_chunk(&val[d].chunk(t)).flat();
        total += pred
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    Ok(total / (pairs.len() * CHUNK_DIM) as f64)
}

/// Sampling mode matching a training dropout rate: a model that never saw
/// the step token is sampled with the null token on both branches.
pub fn default_mode(cond_dropout_p: f64) -> SampleMode {
    SampleMode::Guided {
        null_step: cond_dropout_p >= 1.0,
    }
}

fn batch_for_step(
    config: &TrainConfig,
    inputs: &TrainInputs,
    step: u64,
) -> LossBatch {
    let mut batch_rng = stream_rng(config.seed, "batch", step);
    let batch = sample_batch(
        inputs.train,
        inputs.stats,
        config.batch_size,
        inputs.schedule.steps,
        &mut batch_rng,
    );
    let mut dropout_rng = stream_rng(config.seed, "dropout", step);
    let mask: Vec<bool> = (0..batch.len())
        .map(|_| dropout_rng.random::<f64>() < config.cond_dropout_p)
        .collect();
    LossBatch::from_batch(&batch, inputs.stats, &mask)
}

/// Loss of the batch used at `step`, without updating anything.
pub fn batch_loss(
    params: &PolicyParams,
    config: &TrainConfig,
    inputs: &TrainInputs,
    step: u64,
) -> Result<f64, DiffusionError> {
    ddpm_loss_value(params, inputs.schedule, &batch_for_step(config, inputs, step))
}

/// Runs updates `state.step + 1 ..= config.grad_steps`. Batches and dropout
/// masks are keyed by step index, so a resumed run sees the same data as an
/// uninterrupted one.
pub fn train(
    config: &TrainConfig,
    inputs: &TrainInputs,
    mut state: TrainState,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if inputs.train.iter().all(Demonstration::is_empty) {
        return Err(TrainError::EmptyTrainingSet);
    }
    let pairs = validation_pairs(inputs.val, config.val_pairs);
    let mut log = TrainLog::default();
    let mut interval_loss = 0.0;
    let mut interval_n = 0u64;
    let mut failure = None;

    while state.step < config.grad_steps {
        let step = state.step + 1;
        let batch = batch_for_step(config, inputs, step);
        let result = ddpm_loss(&state.params, inputs.schedule, &batch).and_then(|(loss, grads)| {
            state
                .adam
                .step(&mut state.params, &grads)
                .map(|()| loss)
                .map_err(|e: NetError| DiffusionError::from(e))
        });
        let loss = match result {
            Ok(l) => l,
            Err(source) => {
                log::error!("aborting at step {step}: {source}");
                failure = Some(TrainError::Numeric { step, source });
                break;
            }
        };
        state.step = step;
        interval_loss += loss;
        interval_n += 1;

        if step == 1 || step % config.eval_every == 0 || step == config.grad_steps {
            let policy = Policy {
                params: state.params.clone(),
                stats: inputs.stats.clone(),
                schedule: inputs.schedule.clone(),
                plan: inputs.plan.clone(),
                guidance: *inputs.guidance,
            };
            let val_mse = chunk_mse(
                &policy,
                inputs.val,
                &pairs,
                inputs.guidance,
                default_mode(config.cond_dropout_p),
                config.seed,
            )
            .unwrap_or(f64::NAN);
            let row = LogRow {
                step,
                loss: interval_loss / interval_n as f64,
                val_mse,
            };
            log::info!("step {} loss {:.5} val_mse {:.5}", row.step, row.loss, row.val_mse);
            log.rows.push(row);
            interval_loss = 0.0;
            interval_n = 0;
        }
    }
    Ok(TrainOutcome {
        state,
        log,
        failure,
    })
}
