use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{EntropyCurve, Metrics, RolloutRecord, SweepTable, Variant};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w.into_inner().map_err(|e| ReportError::Io {
        path: PathBuf::new(),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn metrics_csv(rows: &[(Variant, Metrics)]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "success_rate", "repetitive_mean", "completion_time_mean", "n"])?;
    for (v, m) in rows {
        w.write_record([
            v.name().to_string(),
            m.success_rate.to_string(),
            m.repetitive_mean.to_string(),
            m.completion_time_mean.to_string(),
            m.n.to_string(),
        ])?;
    }
    finish(w)
}

pub fn termination_csv(rows: &[(Variant, &[RolloutRecord])]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "seed", "termination_step"])?;
    for (v, records) in rows {
        let mut sorted: Vec<&RolloutRecord> = records.iter().collect();
        sorted.sort_by_key(|r| r.seed);
        for r in sorted {
            w.write_record([
                v.name().to_string(),
                r.seed.to_string(),
                r.termination_step.to_string(),
            ])?;
        }
    }
    finish(w)
}

pub fn entropy_csv(rows: &[(Variant, &EntropyCurve)]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "timestep", "entropy_nats"])?;
    for (v, curve) in rows {
        for p in &curve.points {
            w.write_record([v.name().to_string(), p.timestep.to_string(), p.entropy.to_string()])?;
        }
    }
    finish(w)
}

pub fn sweep_csv(table: &SweepTable) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lambda_max", "trial", "mse"])?;
    for r in &table.rows {
        w.write_record([r.lambda_max.to_string(), r.trial.to_string(), r.mse.to_string()])?;
    }
    finish(w)
}

pub fn write_csv_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{env_reset, Trajectory};
    use crate::evalsuite::{EntropyPoint, SweepRow};

    #[test]
    fn metrics_header_and_rows() {
        let m = Metrics {
            n: 3,
            success_rate: 0.5,
            repetitive_mean: 0.25,
            completion_time_mean: 16.2,
            failures: 0,
        };
        let s = metrics_csv(&[(Variant::CfgDp, m), (Variant::DpBaseline, m)]).unwrap();
        assert_eq!(
            s,
            "variant,success_rate,repetitive_mean,completion_time_mean,n\n\
             CFG_DP,0.5,0.25,16.2,3\nDP_BASELINE,0.5,0.25,16.2,3\n"
        );
    }

    #[test]
    fn termination_rows_sorted_by_seed() {
        let rec = |seed: u64, step: u32| RolloutRecord {
            seed,
            trajectory: Trajectory::new(env_reset(0)),
            lambdas: Vec::new(),
            termination_step: step,
            cycles_done: 0,
            success: false,
            repetitive: 0,
            completion_time: f64::from(step) / 10.0,
            failure: None,
        };
        let recs = vec![rec(9, 170), rec(2, 150)];
        let s = termination_csv(&[(Variant::NoCfg, &recs)]).unwrap();
        assert_eq!(s, "variant,seed,termination_step\nNO_CFG,2,150\nNO_CFG,9,170\n");
    }

    #[test]
    fn entropy_and_sweep_rows() {
        let curve = EntropyCurve {
            points: vec![EntropyPoint {
                timestep: 4,
                entropy: 1.5,
                per_dim: [1.5; 7],
                samples: 100,
            }],
        };
        assert_eq!(
            entropy_csv(&[(Variant::CfgDp, &curve)]).unwrap(),
            "variant,timestep,entropy_nats\nCFG_DP,4,1.5\n"
        );
        let table = SweepTable {
            rows: vec![SweepRow {
                lambda_max: 1.1,
                trial: 0,
                mse: 0.5,
            }],
        };
        assert_eq!(sweep_csv(&table).unwrap(), "lambda_max,trial,mse\n1.1,0,0.5\n");
    }
}
