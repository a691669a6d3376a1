use std::path::{Path, PathBuf};

use cfgdp::dataset::{
    compute_norm_stats, generate_demos, load_dataset, save_dataset, split, DatasetFile,
    Demonstration, NormStats,
};
use cfgdp::diffusion::{make_noise_schedule, DdimPlan, GuidanceConfig, NoiseSchedule};
use cfgdp::env::{run_expert, NOMINAL_STROKE_LEN};
use cfgdp::evalsuite::{
    conditional_entropy, entropy_csv, eval_seeds, evaluate, metrics_csv, summarize,
    sweep_csv, sweep_lambda_max, termination_csv, termination_distribution, write_csv_file,
    EntropyCurve, Metrics, PolicyPair, PolicySampler, RolloutRecord, SweepTable, Variant,
    VariantSpec, MIN_RECORDS,
};
use cfgdp::par::{map_indexed, with_jobs, ExecMode};
use cfgdp::rng::derive_seed;
use cfgdp::trainer::{
    checkpoint_digest, load_checkpoint, save_checkpoint, train, validation_pairs, Checkpoint,
    TrainConfig, TrainInputs, TrainState,
};

use crate::config::RunConfig;
use crate::CliError;

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
pub const CKPT_CFG: &str = "checkpoints/cfg";
pub const CKPT_NOSTEP: &str = "checkpoints/nostep";

/// Resolved configuration and output directory for one command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: RunConfig, out: PathBuf) -> Self {
        let mut config = config;
        config.out_dir = Some(out.clone());
        Self { config, out }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn prepare(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))?;
        let text = serde_json::to_string_pretty(&self.config).expect("config serializes");
        let path = self.path(EFFECTIVE_CONFIG);
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }

    fn pool<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        with_jobs(self.config.jobs, f)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn numeric(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    pub n: usize,
    pub train: usize,
    pub val: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub s_mean: f64,
}

pub fn cmd_gen_data(ctx: &Context) -> Result<DataSummary, CliError> {
    ctx.prepare()?;
    let c = &ctx.config;
    let seed_base = derive_seed(c.seed, "data", 0) >> 24;
    let demos = ctx.pool(|| generate_demos(c.data.n_demos, seed_base, &c.episode, ExecMode::Parallel))?;
    let (train, val) = split(&demos, c.data.train_fraction, derive_seed(c.seed, "split", 0))?;
    let stats = compute_norm_stats(&train)?;
    let lengths: Vec<usize> = demos.iter().map(Demonstration::len).collect();
    let summary = DataSummary {
        n: demos.len(),
        train: train.len(),
        val: val.len(),
        min_len: lengths.iter().copied().min().unwrap_or(0),
        max_len: lengths.iter().copied().max().unwrap_or(0),
        s_mean: stats.s_mean,
    };
    let path = c.dataset_path(&ctx.out);
    save_dataset(
        &path,
        &DatasetFile {
            train,
            val,
            stats: Some(stats),
        },
    )?;
    println!(
        "demos {} (train {}, val {}), lengths {}..{}, s_mean {:.2} -> {}",
        summary.n,
        summary.train,
        summary.val,
        summary.min_len,
        summary.max_len,
        summary.s_mean,
        path.display()
    );
    Ok(summary)
}

struct Inputs {
    train: Vec<Demonstration>,
    val: Vec<Demonstration>,
    stats: NormStats,
    schedule: NoiseSchedule,
    plan: DdimPlan,
    guidance: GuidanceConfig,
}

fn load_inputs(ctx: &Context) -> Result<Inputs, CliError> {
    let c = &ctx.config;
    let data = load_dataset(&c.dataset_path(&ctx.out))?;
    let stats = match data.stats {
        Some(s) => s,
        None => compute_norm_stats(&data.train)?,
    };
    let d = c.diffusion;
    let schedule = make_noise_schedule(d.steps, d.beta_start, d.beta_end)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let plan = DdimPlan::uniform(d.steps, d.inference_steps)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let guidance = GuidanceConfig::from_mean_length(
        c.guidance.lambda_max,
        stats.s_mean,
        c.guidance.s_t0_fraction,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Inputs {
        train: data.train,
        val: data.val,
        stats,
        schedule,
        plan,
        guidance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub cfg_digest: String,
    pub nostep_digest: String,
    pub final_val_mse: [f64; 2],
}

pub fn cmd_train(ctx: &Context) -> Result<TrainSummary, CliError> {
    let inputs = load_inputs(ctx)?;
    ctx.prepare()?;
    let c = &ctx.config;
    let runs: [(&str, TrainConfig, &str); 2] = [
        ("cfg", c.train_config(c.train.cond_dropout_p), CKPT_CFG),
        ("nostep", c.train_config(1.0), CKPT_NOSTEP),
    ];
    let train_inputs = TrainInputs {
        train: &inputs.train,
        val: &inputs.val,
        stats: &inputs.stats,
        schedule: &inputs.schedule,
        plan: &inputs.plan,
        guidance: &inputs.guidance,
    };
    let outcomes = ctx.pool(|| {
        map_indexed(ExecMode::Parallel, &runs, |_, (_, cfg, _)| {
            train(cfg, &train_inputs, TrainState::fresh(cfg, &inputs.schedule))
        })
    });
    let mut digests = Vec::new();
    let mut final_mse = [f64::NAN; 2];
    let mut failure = None;
    for (i, ((name, cfg, rel), outcome)) in runs.iter().zip(outcomes).enumerate() {
        let outcome = outcome.map_err(|e| CliError::Config(e.to_string()))?;
        let dir = ctx.path(rel);
        let ckpt = Checkpoint {
            policy: cfgdp::diffusion::Policy {
                params: outcome.state.params,
                stats: inputs.stats.clone(),
                schedule: inputs.schedule.clone(),
                plan: inputs.plan.clone(),
                guidance: inputs.guidance,
            },
            train_config: *cfg,
            trained_steps: outcome.state.step,
        };
        save_checkpoint(&dir, &ckpt)?;
        let log_path = ctx.path(&format!("train_{name}.csv"));
        write_csv_file(&log_path, &outcome.log.to_csv())?;
        let digest = checkpoint_digest(&dir)?;
        final_mse[i] = outcome.log.rows.last().map_or(f64::NAN, |r| r.val_mse);
        println!(
            "{name}: {} steps, val_mse {:.5}, digest {digest}",
            outcome.state.step, final_mse[i]
        );
        digests.push(digest);
        if let Some(f) = outcome.failure {
            failure.get_or_insert(format!("{name}: {f}"));
        }
    }
    if let Some(f) = failure {
        return Err(CliError::Numeric(f));
    }
    Ok(TrainSummary {
        nostep_digest: digests.pop().unwrap_or_default(),
        cfg_digest: digests.pop().unwrap_or_default(),
        final_val_mse: final_mse,
    })
}

fn load_pair(ctx: &Context) -> Result<(Checkpoint, Checkpoint), CliError> {
    Ok((
        load_checkpoint(&ctx.path(CKPT_CFG))?,
        load_checkpoint(&ctx.path(CKPT_NOSTEP))?,
    ))
}

fn spec_for(ctx: &Context, v: Variant) -> VariantSpec {
    VariantSpec::new(v).with_lambda_max(ctx.config.guidance.lambda_max)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub results: Vec<(Variant, Metrics, Vec<RolloutRecord>)>,
}

impl EvalReport {
    pub fn get(&self, v: Variant) -> Option<(&Metrics, &[RolloutRecord])> {
        self.results
            .iter()
            .find(|r| r.0 == v)
            .map(|r| (&r.1, r.2.as_slice()))
    }
}

pub fn cmd_eval(ctx: &Context) -> Result<EvalReport, CliError> {
    let (cfg_ckpt, nostep_ckpt) = load_pair(ctx)?;
    ctx.prepare()?;
    let c = &ctx.config;
    let pair = PolicyPair {
        cfg: &cfg_ckpt.policy,
        nostep: &nostep_ckpt.policy,
    };
    let seeds = eval_seeds(c.seed, c.eval.n);
    let mut results = Vec::new();
    for v in c.eval_variants()? {
        let records = ctx.pool(|| {
            evaluate(pair.for_variant(v), &spec_for(ctx, v), &c.episode, &seeds, ExecMode::Parallel)
        });
        let m = summarize(&records);
        print!(
            "{v}: success {:.3} repetitive {:.3} completion {:.2}s n {}",
            m.success_rate, m.repetitive_mean, m.completion_time_mean, m.n
        );
        if records.len() >= MIN_RECORDS {
            let t = termination_distribution(
                &records,
                cfg_ckpt.policy.stats.s_mean,
                f64::from(NOMINAL_STROKE_LEN),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            print!(
                " termination mean {:.1} std {:.2} tail {:.3}",
                t.mean, t.std, t.tail_mass
            );
        }
        if m.failures > 0 {
            print!(" failed {}", m.failures);
        }
        println!();
        results.push((v, m, records));
    }
    let metrics: Vec<(Variant, Metrics)> = results.iter().map(|r| (r.0, r.1)).collect();
    write_csv_file(&ctx.path("metrics.csv"), &metrics_csv(&metrics)?)?;
    let term: Vec<(Variant, &[RolloutRecord])> =
        results.iter().map(|r| (r.0, r.2.as_slice())).collect();
    write_csv_file(&ctx.path("termination.csv"), &termination_csv(&term)?)?;
    Ok(EvalReport { seeds, results })
}

#[derive(Debug, Clone)]
pub struct EntropyReport {
    pub probe: Demonstration,
    pub curves: Vec<(Variant, EntropyCurve)>,
}

impl EntropyReport {
    pub fn get(&self, v: Variant) -> Option<&EntropyCurve> {
        self.curves.iter().find(|r| r.0 == v).map(|r| &r.1)
    }
}

pub fn cmd_entropy(ctx: &Context) -> Result<EntropyReport, CliError> {
    let (cfg_ckpt, nostep_ckpt) = load_pair(ctx)?;
    ctx.prepare()?;
    let c = &ctx.config;
    let pair = PolicyPair {
        cfg: &cfg_ckpt.policy,
        nostep: &nostep_ckpt.policy,
    };
    let probe_seed = derive_seed(c.seed, "probe", 0);
    let probe = Demonstration::from_trajectory(probe_seed, &run_expert(probe_seed, &c.episode));
    let timesteps: Vec<usize> = (0..probe.len()).step_by(c.entropy.stride).collect();
    let stroke = NOMINAL_STROKE_LEN as usize;
    let mut curves = Vec::new();
    for v in c.entropy_variants()? {
        let policy = pair.for_variant(v);
        let sampler = PolicySampler {
            policy,
            guidance: spec_for(ctx, v).guidance(policy),
            mode: v.mode(),
        };
        let curve = ctx
            .pool(|| {
                conditional_entropy(
                    &sampler,
                    &probe,
                    &timesteps,
                    c.entropy.samples,
                    derive_seed(c.seed, "mc", 0),
                    ExecMode::Parallel,
                )
            })
            .map_err(numeric)?;
        println!(
            "{v}: probe length {}, mid {:.4} late {:.4} nats",
            probe.len(),
            curve.mid_mean(stroke),
            curve.late_mean(stroke)
        );
        curves.push((v, curve));
    }
    let rows: Vec<(Variant, &EntropyCurve)> = curves.iter().map(|r| (r.0, &r.1)).collect();
    write_csv_file(&ctx.path("entropy.csv"), &entropy_csv(&rows)?)?;
    Ok(EntropyReport { probe, curves })
}

pub fn cmd_sweep(ctx: &Context) -> Result<SweepTable, CliError> {
    let inputs = load_inputs(ctx)?;
    let cfg_ckpt = load_checkpoint(&ctx.path(CKPT_CFG))?;
    ctx.prepare()?;
    let c = &ctx.config;
    let pairs = validation_pairs(&inputs.val, c.sweep.val_pairs);
    let table = ctx
        .pool(|| {
            sweep_lambda_max(
                &cfg_ckpt.policy,
                &c.sweep.grid,
                &inputs.val,
                &pairs,
                c.sweep.trials,
                derive_seed(c.seed, "sweep", 0),
                ExecMode::Parallel,
            )
        })
        .map_err(numeric)?;
    for (l, mse) in table.means() {
        println!("lambda_max {l}: mse {mse:.6}");
    }
    if let Some((l, mse)) = table.argmin() {
        println!("argmin lambda_max {l} (mse {mse:.6})");
    }
    write_csv_file(&ctx.path("sweep.csv"), &sweep_csv(&table)?)?;
    Ok(table)
}
