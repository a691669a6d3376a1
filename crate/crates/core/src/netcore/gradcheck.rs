use super::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many coordinates, spread evenly over the flat
    /// parameter vector. `None` checks every coordinate.
    pub max_coords: Option<usize>,
    /// Lower bound on the relative-error denominator so coordinates whose
    /// true gradient is ~0 are judged on absolute error.
    pub denom_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: None,
            denom_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coord: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the analytic gradient returned by `loss_and_grad` against
/// central differences. `loss_and_grad` must return the scalar loss and the
/// flat gradient in [`ParamSet`] order.
pub fn grad_check<P, F>(
    params: &P,
    loss_and_grad: F,
    tolerance: f64,
    opts: GradCheckOptions,
) -> GradCheckReport
where
    P: ParamSet + Clone,
    F: Fn(&P) -> (f64, Vec<f64>),
{
    let n = params.num_params();
    let (_, analytic) = loss_and_grad(params);
    assert_eq!(analytic.len(), n, "analytic gradient length");

    let coords: Vec<usize> = match opts.max_coords {
        Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    };

    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut worst = None;
    let mut max_rel = 0.0f64;
    for &c in &coords {
        flat[c] = base[c] + opts.step;
        probe.copy_from_flat(&flat).expect("same shape");
        let plus = loss_and_grad(&probe).0;
        flat[c] = base[c] - opts.step;
        probe.copy_from_flat(&flat).expect("same shape");
        let minus = loss_and_grad(&probe).0;
        flat[c] = base[c];

        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic[c];
        let denom = a.abs().max(numeric.abs()).max(opts.denom_floor);
        let rel = (a - numeric).abs() / denom;
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some(c);
        }
    }

    GradCheckReport {
        max_rel_error: max_rel,
        worst_coord: worst,
        checked: coords.len(),
        tolerance,
        passed: max_rel < tolerance,
    }
}
