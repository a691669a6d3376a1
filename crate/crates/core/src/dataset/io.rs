use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Demonstration, Frame, NormStats, FRAME_DIM};
use crate::env::{ACTION_DIM, ENV_FEATURE_DIM};

pub const DATA_MAGIC: &str = "CFGDP-DATA-1";
const VALUES_PER_STEP: usize = FRAME_DIM + ACTION_DIM;

/// Train and validation demonstrations with the training-split statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub train: Vec<Demonstration>,
    pub val: Vec<Demonstration>,
    pub stats: Option<NormStats>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    frame_dim: usize,
    action_dim: usize,
    train_count: usize,
    val_count: usize,
    seeds: Vec<u64>,
    lengths: Vec<usize>,
    stats: Option<NormStats>,
}

/// Text header (magic line, one JSON index line) followed by every step of
/// every demonstration as little-endian `f32`: frame features, then action.
pub fn write_dataset<W: Write>(mut w: W, data: &DatasetFile) -> std::io::Result<()> {
    let all: Vec<&Demonstration> = data.train.iter().chain(&data.val).collect();
    let index = Index {
        frame_dim: FRAME_DIM,
        action_dim: ACTION_DIM,
        train_count: data.train.len(),
        val_count: data.val.len(),
        seeds: all.iter().map(|d| d.seed).collect(),
        lengths: all.iter().map(|d| d.len()).collect(),
        stats: data.stats.clone(),
    };
    writeln!(w, "{DATA_MAGIC}")?;
    serde_json::to_writer(&mut w, &index)?;
    writeln!(w)?;
    let mut body = Vec::with_capacity(index.lengths.iter().sum::<usize>() * VALUES_PER_STEP * 4);
    for d in all {
        for (f, a) in d.frames.iter().zip(&d.actions) {
            for v in f.features().iter().chain(a) {
                body.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    w.write_all(&body)
}

fn parse_err(offset: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        offset,
        message: message.into(),
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<DatasetFile, DatasetError> {
    let magic = DATA_MAGIC.as_bytes();
    if let Some(i) = (0..=magic.len()).find(|&i| {
        let expected = magic.get(i).copied().unwrap_or(b'\n');
        bytes.get(i) != Some(&expected)
    }) {
        return Err(parse_err(i, format!("expected magic line {DATA_MAGIC:?}")));
    }
    let index_start = magic.len() + 1;
    let index_len = bytes[index_start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(index_start, "unterminated index line"))?;
    let index_bytes = &bytes[index_start..index_start + index_len];
    let index: Index = serde_json::from_slice(index_bytes).map_err(|e| {
        let line_offset = index_bytes
            .iter()
            .take(e.column().saturating_sub(1))
            .count();
        parse_err(index_start + line_offset, format!("bad index: {e}"))
    })?;
    if index.frame_dim != FRAME_DIM || index.action_dim != ACTION_DIM {
        return Err(parse_err(
            index_start,
            format!(
                "dims {}x{} do not match {FRAME_DIM}x{ACTION_DIM}",
                index.frame_dim, index.action_dim
            ),
        ));
    }
    let n = index.train_count + index.val_count;
    if index.seeds.len() != n || index.lengths.len() != n {
        return Err(parse_err(index_start, "seed/length lists disagree with counts"));
    }

    let body_start = index_start + index_len + 1;
    let body = &bytes[body_start..];
    let expected = index.lengths.iter().sum::<usize>() * VALUES_PER_STEP * 4;
    if body.len() != expected {
        return Err(parse_err(
            body_start + body.len().min(expected),
            format!("body has {} bytes, expected {expected}", body.len()),
        ));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
    let mut demos = Vec::with_capacity(n);
    for (&seed, &len) in index.seeds.iter().zip(&index.lengths) {
        let mut frames = Vec::with_capacity(len);
        let mut actions = Vec::with_capacity(len);
        for t in 0..len {
            let step: Vec<f64> = values.by_ref().take(VALUES_PER_STEP).collect();
            let mut env_features = [0.0; ENV_FEATURE_DIM];
            env_features.copy_from_slice(&step[..ENV_FEATURE_DIM]);
            let mut joint_state = [0.0; FRAME_DIM - ENV_FEATURE_DIM];
            joint_state.copy_from_slice(&step[ENV_FEATURE_DIM..FRAME_DIM]);
            let mut action = [0.0; ACTION_DIM];
            action.copy_from_slice(&step[FRAME_DIM..]);
            frames.push(Frame {
                env_features,
                joint_state,
                timestep: t as u32,
            });
            actions.push(action);
        }
        demos.push(Demonstration {
            seed,
            frames,
            actions,
        });
    }
    let val = demos.split_off(index.train_count);
    Ok(DatasetFile {
        train: demos,
        val,
        stats: index.stats,
    })
}

pub fn save_dataset(path: &Path, data: &DatasetFile) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::new();
    write_dataset(&mut buf, data).map_err(io_err)?;
    std::fs::write(path, buf).map_err(io_err)
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(&bytes)
}
