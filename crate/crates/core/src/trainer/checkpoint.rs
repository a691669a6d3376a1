use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::TrainConfig;
use crate::dataset::NormStats;
use crate::diffusion::{
    make_noise_schedule, DdimPlan, DiffusionError, GuidanceConfig, NoiseSchedule, Policy,
    PolicyParams,
};
use crate::netcore::{Activation, DenseLayer, MlpParams, NetError, ParamSet};

pub const CKPT_MAGIC: &str = "CFGDP-CKPT-1";
const MANIFEST_FILE: &str = "manifest.txt";
const WEIGHTS_FILE: &str = "weights.f32";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected first line {CKPT_MAGIC:?}, found {found:?}")]
    BadMagic { path: String, found: String },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: String, message: String },
    #[error("{path}: weight file holds {found} values, manifest declares {expected}")]
    WeightCount {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// A trained policy with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: Policy,
    pub train_config: TrainConfig,
    pub trained_steps: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerSpec {
    name: String,
    in_dim: usize,
    out_dim: usize,
    activation: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSpec {
    steps: usize,
    beta_start: f64,
    beta_end: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    layers: Vec<LayerSpec>,
    num_params: usize,
    stats: NormStats,
    schedule: ScheduleSpec,
    plan: DdimPlan,
    output_skip: bool,
    guidance: GuidanceConfig,
    train_config: TrainConfig,
    trained_steps: u64,
}

fn layer_spec(name: String, l: &DenseLayer) -> LayerSpec {
    LayerSpec {
        name,
        in_dim: l.in_dim(),
        out_dim: l.out_dim(),
        activation: l.activation.name().to_string(),
    }
}

fn encode(ckpt: &Checkpoint) -> (Vec<u8>, Vec<u8>) {
    let p = &ckpt.policy;
    let mut layers = vec![layer_spec("step_embed".into(), &p.params.step_embed)];
    for (i, l) in p.params.net.layers.iter().enumerate() {
        layers.push(layer_spec(format!("net.{i}"), l));
    }
    let manifest = Manifest {
        layers,
        num_params: p.params.num_params(),
        stats: p.stats.clone(),
        schedule: ScheduleSpec {
            steps: p.schedule.steps,
            beta_start: p.schedule.beta_start,
            beta_end: p.schedule.beta_end,
        },
        plan: p.plan.clone(),
        output_skip: p.params.skip.is_some(),
        guidance: p.guidance,
        train_config: ckpt.train_config,
        trained_steps: ckpt.trained_steps,
    };
    let mut text = format!("{CKPT_MAGIC}\n");
    text.push_str(&serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
    text.push('\n');
    let weights = p
        .params
        .to_flat()
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect();
    (text.into_bytes(), weights)
}

/// Writes `manifest.txt` and `weights.f32` into directory `dir`.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| CheckpointError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let (manifest, weights) = encode(ckpt);
    let m = dir.join(MANIFEST_FILE);
    std::fs::write(&m, manifest).map_err(io(&m))?;
    let w = dir.join(WEIGHTS_FILE);
    std::fs::write(&w, weights).map_err(io(&w))?;
    Ok(())
}

/// SHA-256 over the manifest and weight bytes, as lowercase hex.
pub fn checkpoint_digest(dir: &Path) -> Result<String, CheckpointError> {
    let mut h = Sha256::new();
    for name in [MANIFEST_FILE, WEIGHTS_FILE] {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn build_layer(spec: &LayerSpec, values: &mut impl Iterator<Item = f64>) -> Result<DenseLayer, NetError> {
    let activation = Activation::from_name(&spec.activation)?;
    let w: Vec<f64> = values.by_ref().take(spec.in_dim * spec.out_dim).collect();
    let b: Vec<f64> = values.by_ref().take(spec.out_dim).collect();
    let weights = Array2::from_shape_vec((spec.out_dim, spec.in_dim), w).map_err(|_| {
        NetError::DimensionMismatch {
            context: "checkpoint weights",
            expected: spec.in_dim * spec.out_dim,
            found: 0,
        }
    })?;
    DenseLayer::new(weights, Array1::from(b), activation)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, CheckpointError> {
    let mpath = dir.join(MANIFEST_FILE);
    let path = mpath.display().to_string();
    let text = std::fs::read_to_string(&mpath).map_err(|source| CheckpointError::Io {
        path: path.clone(),
        source,
    })?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    if first != CKPT_MAGIC {
        return Err(CheckpointError::BadMagic {
            path,
            found: first.chars().take(40).collect(),
        });
    }
    let manifest: Manifest =
        serde_json::from_str(rest).map_err(|e| CheckpointError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;

    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = std::fs::read(&wpath).map_err(|source| CheckpointError::Io {
        path: wpath.display().to_string(),
        source,
    })?;
    let found = bytes.len() / 4;
    if bytes.len() % 4 != 0 || found != manifest.num_params {
        return Err(CheckpointError::WeightCount {
            path: wpath.display().to_string(),
            expected: manifest.num_params,
            found,
        });
    }
    let declared: usize = manifest
        .layers
        .iter()
        .map(|l| l.in_dim * l.out_dim + l.out_dim)
        .sum();
    if declared != manifest.num_params || manifest.layers.len() < 2 {
        return Err(CheckpointError::Manifest {
            path,
            message: format!("layer shapes cover {declared} values, num_params is {}", manifest.num_params),
        });
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
    let step_embed = build_layer(&manifest.layers[0], &mut values)?;
    let net_layers = manifest.layers[1..]
        .iter()
        .map(|s| build_layer(s, &mut values))
        .collect::<Result<Vec<_>, _>>()?;
    let s = &manifest.schedule;
    let schedule: NoiseSchedule = make_noise_schedule(s.steps, s.beta_start, s.beta_end)?;
    manifest.plan.validate(&schedule)?;
    let mut params = PolicyParams {
        step_embed,
        net: MlpParams::new(net_layers)?,
        skip: None,
    };
    if manifest.output_skip {
        params = params.with_skip(&schedule);
    }
    Ok(Checkpoint {
        policy: Policy {
            params,
            stats: manifest.stats,
            schedule,
            plan: manifest.plan,
            guidance: manifest.guidance,
        },
        train_config: manifest.train_config,
        trained_steps: manifest.trained_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_norm_stats, generate_demos};
    use crate::diffusion::{NoisePredictor, StepCondition};
    use crate::env::EpisodeConfig;
    use crate::par::ExecMode;
    use crate::rng::seeded;
    use ndarray::Array2;

    fn checkpoint() -> Checkpoint {
        let demos = generate_demos(2, 0, &EpisodeConfig::default(), ExecMode::Sequential).unwrap();
        let stats = compute_norm_stats(&demos).unwrap();
        let schedule = NoiseSchedule::default();
        Checkpoint {
            policy: Policy {
                params: PolicyParams::init(&mut seeded(3)).with_skip(&schedule),
                plan: DdimPlan::uniform(schedule.steps, 10).unwrap(),
                guidance: GuidanceConfig::new(1.1, stats.s_mean / 2.0).unwrap(),
                schedule,
                stats,
            },
            train_config: TrainConfig::default(),
            trained_steps: 17,
        }
    }

    #[test]
    fn round_trip_preserves_everything_up_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint();
        save_checkpoint(dir.path(), &ck).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.policy.stats, ck.policy.stats);
        assert_eq!(back.policy.schedule, ck.policy.schedule);
        assert_eq!(back.policy.plan, ck.policy.plan);
        assert_eq!(back.policy.guidance, ck.policy.guidance);
        assert_eq!(back.train_config, ck.train_config);
        assert_eq!(back.trained_steps, 17);
        assert_eq!(back.policy.params.skip, ck.policy.params.skip);

        let x = Array2::from_shape_fn((2, crate::dataset::CHUNK_DIM), |(i, j)| (i + j) as f64 * 0.01);
        let o = Array2::from_shape_fn((2, crate::dataset::OBS_DIM), |(i, j)| (i * j) as f64 * 0.02);
        let c = [StepCondition::Active(0.4), StepCondition::Null];
        let a = ck.policy.params.predict_noise(x.view(), o.view(), &c, &[3, 40]).unwrap();
        let b = back.policy.params.predict_noise(x.view(), o.view(), &c, &[3, 40]).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-5 * u.abs().max(1.0), "{u} vs {v}");
        }

        let mut quantized = ck.clone();
        let flat: Vec<f64> = ck.policy.params.to_flat().iter().map(|v| f64::from(*v as f32)).collect();
        quantized.policy.params.copy_from_flat(&flat).unwrap();
        let q = quantized.policy.params.predict_noise(x.view(), o.view(), &c, &[3, 40]).unwrap();
        for (u, v) in q.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-7);
        }

        // A second save of the reloaded checkpoint is byte-identical.
        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(dir2.path(), &back).unwrap();
        assert_eq!(
            checkpoint_digest(dir.path()).unwrap(),
            checkpoint_digest(dir2.path()).unwrap()
        );
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &checkpoint()).unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&m).unwrap();
        std::fs::write(&m, text.replacen("CKPT-1", "CKPT-9", 1)).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(CheckpointError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &checkpoint()).unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let bytes = std::fs::read(&w).unwrap();
        std::fs::write(&w, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(CheckpointError::WeightCount { .. })
        ));
    }

    #[test]
    fn missing_directory_is_io_error() {
        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/ckpt")),
            Err(CheckpointError::Io { .. })
        ));
    }
}
