use thiserror::Error;

use super::RolloutRecord;

pub const MIN_RECORDS: usize = 30;
pub const TERMINATION_BIN_WIDTH: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerminationError {
    #[error("termination statistics need at least {MIN_RECORDS} records, got {0}")]
    InsufficientData(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminationStats {
    /// `(bin start, count)` with bins of [`TERMINATION_BIN_WIDTH`] steps.
    pub bins: Vec<(u32, usize)>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub tail_threshold: f64,
    /// Fraction of records terminating strictly after `tail_threshold`.
    pub tail_mass: f64,
}

/// Histogram and moments of termination steps. The right tail starts at
/// `s_mean + 2 * stroke_len`.
pub fn termination_distribution(
    records: &[RolloutRecord],
    s_mean: f64,
    stroke_len: f64,
) -> Result<TerminationStats, TerminationError> {
    if records.len() < MIN_RECORDS {
        return Err(TerminationError::InsufficientData(records.len()));
    }
    let steps: Vec<u32> = records.iter().map(|r| r.termination_step).collect();
    let n = steps.len() as f64;
    let mean = steps.iter().map(|&s| f64::from(s)).sum::<f64>() / n;
    let var = steps
        .iter()
        .map(|&s| (f64::from(s) - mean).powi(2))
        .sum::<f64>()
        / n;
    let max_bin = steps.iter().max().copied().unwrap_or(0) / TERMINATION_BIN_WIDTH;
    let mut counts = vec![0usize; max_bin as usize + 1];
    for &s in &steps {
        counts[(s / TERMINATION_BIN_WIDTH) as usize] += 1;
    }
    let tail_threshold = s_mean + 2.0 * stroke_len;
    let tail = steps.iter().filter(|&&s| f64::from(s) > tail_threshold).count();
    Ok(TerminationStats {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i as u32 * TERMINATION_BIN_WIDTH, c))
            .collect(),
        mean,
        std: var.sqrt(),
        tail_threshold,
        tail_mass: tail as f64 / n,
    })
}
