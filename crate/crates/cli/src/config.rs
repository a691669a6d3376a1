use std::path::{Path, PathBuf};

use cfgdp::diffusion::{
    DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_INFERENCE_STEPS, DEFAULT_LAMBDA_MAX,
    DEFAULT_S_T0_FRACTION, DEFAULT_STEPS,
};
use cfgdp::env::EpisodeConfig;
use cfgdp::evalsuite::{Variant, DEFAULT_SWEEP_GRID, DEFAULT_TRIALS, MC_SAMPLES};
use cfgdp::trainer::TrainConfig;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const OUT_ENV: &str = "CFGDP_OUT";
pub const DEFAULT_OUT: &str = "cfgdp-out";
/// Adam step size used by every profile.
pub const PROFILE_LR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Smoke,
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_demos: usize,
    pub train_fraction: f64,
    /// Defaults to `dataset.cfgdp` inside the output directory.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_demos: 200,
            train_fraction: 0.8,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub inference_steps: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            inference_steps: DEFAULT_INFERENCE_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSettings {
    pub lambda_max: f64,
    /// Sigmoid midpoint as a fraction of the mean training demo length.
    pub s_t0_fraction: f64,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        Self {
            lambda_max: DEFAULT_LAMBDA_MAX,
            s_t0_fraction: DEFAULT_S_T0_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub grad_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub cond_dropout_p: f64,
    pub eval_every: u64,
    pub val_pairs: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            grad_steps: t.grad_steps,
            batch_size: t.batch_size,
            lr: PROFILE_LR,
            cond_dropout_p: t.cond_dropout_p,
            eval_every: t.eval_every,
            val_pairs: t.val_pairs,
        }
    }
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64, cond_dropout_p: f64) -> TrainConfig {
        TrainConfig {
            grad_steps: self.grad_steps,
            batch_size: self.batch_size,
            lr: self.lr,
            cond_dropout_p,
            seed,
            eval_every: self.eval_every,
            val_pairs: self.val_pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n: usize,
    pub variants: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 100,
            variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyConfig {
    pub samples: usize,
    /// Every `stride`-th probe timestep is evaluated.
    pub stride: usize,
    pub variants: Vec<String>,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            samples: MC_SAMPLES,
            stride: 1,
            variants: vec!["CFG_DP".into(), "NO_CFG".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    pub trials: usize,
    pub val_pairs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_SWEEP_GRID.to_vec(),
            trials: DEFAULT_TRIALS,
            val_pairs: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub data: DataConfig,
    pub episode: EpisodeConfig,
    pub diffusion: DiffusionConfig,
    pub guidance: GuidanceSettings,
    pub train: TrainSettings,
    pub eval: EvalConfig,
    pub entropy: EntropyConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut c = RunConfig::default();
        match profile {
            Profile::Desk => {}
            Profile::Smoke => {
                c.data.n_demos = 20;
                c.train.grad_steps = 200;
                c.train.eval_every = 100;
                c.train.val_pairs = 32;
                c.eval.n = 10;
                c.entropy.samples = 20;
                c.entropy.stride = 20;
                c.sweep.trials = 2;
                c.sweep.val_pairs = 32;
            }
            Profile::Paper => {
                c.train.grad_steps = 60_000;
            }
        }
        c
    }

    /// Profile defaults overlaid with the keys present in `overlay`.
    pub fn layered(profile: Profile, overlay: Option<Value>) -> Result<Self, CliError> {
        let mut base =
            serde_json::to_value(Self::for_profile(profile)).expect("config serializes");
        if let Some(o) = overlay {
            merge(&mut base, o);
        }
        serde_json::from_value(base).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path, profile: Profile) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::layered(profile, Some(value))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.data.n_demos < 2 {
            return bad("data.n_demos must be at least 2");
        }
        if self.eval.n == 0 {
            return bad("eval.n must be at least 1");
        }
        if self.entropy.samples == 0 || self.entropy.stride == 0 {
            return bad("entropy.samples and entropy.stride must be positive");
        }
        if self.sweep.trials == 0 || self.sweep.grid.is_empty() {
            return bad("sweep needs at least one grid value and one trial");
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive");
        }
        self.eval_variants()?;
        self.entropy_variants()?;
        self.train_config(0.0).validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn eval_variants(&self) -> Result<Vec<Variant>, CliError> {
        parse_variants(&self.eval.variants)
    }

    pub fn entropy_variants(&self) -> Result<Vec<Variant>, CliError> {
        parse_variants(&self.entropy.variants)
    }

    pub fn train_config(&self, cond_dropout_p: f64) -> TrainConfig {
        self.train.to_train_config(self.seed, cond_dropout_p)
    }

    pub fn dataset_path(&self, out: &Path) -> PathBuf {
        self.data.path.clone().unwrap_or_else(|| out.join("dataset.cfgdp"))
    }
}

pub fn parse_variants(names: &[String]) -> Result<Vec<Variant>, CliError> {
    if names.is_empty() {
        return Err(CliError::Config("no variants requested".into()));
    }
    names
        .iter()
        .map(|n| {
            Variant::from_name(n).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown variant {n:?}; valid names: {}",
                    Variant::valid_names()
                ))
            })
        })
        .collect()
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
