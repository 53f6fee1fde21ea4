//! Pairs bootstrap for the UMQPE.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::spline::{regress_rif_splines, SplineConfig};
use crate::error::{Error, Result};
use crate::huber::MQuantileSpec;
use crate::linalg;
use crate::rif;
use crate::solver::{fit_unconditional, IrlsOptions};

#[derive(Debug, Clone, PartialEq)]
pub enum RifModel {
    Linear,
    Spline(SplineConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub failed: usize,
    pub ci_lower: DMatrix<f64>,
    pub ci_upper: DMatrix<f64>,
    pub se_boot: DMatrix<f64>,
    pub seed: u64,
    pub level: f64,
}

fn all_rows_equal(y: &DMatrix<f64>) -> bool {
    (1..y.nrows()).all(|i| y.row(i) == y.row(0))
}

/// Point estimate of `alpha` for one (re)sample.
pub(crate) fn estimate_alpha(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    spec: &MQuantileSpec,
    model: &RifModel,
    opts: &IrlsOptions,
) -> Result<DMatrix<f64>> {
    // a constant response has a constant RIF equal to itself
    let rif_values = if all_rows_equal(y) {
        y.clone()
    } else {
        let fit = fit_unconditional(y, spec, opts)?;
        if !fit.converged {
            return Err(Error::NonConvergence(format!("IRLS stopped at equation norm {:e}", fit.eq_norm)));
        }
        rif::influence(y, &fit)?.rif_values
    };
    match model {
        RifModel::Linear => Ok(linalg::ols(x, &rif_values)?.0),
        RifModel::Spline(cfg) => Ok(regress_rif_splines(&rif_values, x, cfg)?.alpha),
    }
}

/// Type-7 sample quantile of sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile intervals from `b` pairs resamples. Every replicate draws from
/// its own stream of the master seed, so the output does not depend on the
/// thread schedule.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    spec: &MQuantileSpec,
    model: &RifModel,
    b: usize,
    level: f64,
    seed: u64,
    opts: &IrlsOptions,
) -> Result<BootstrapResult> {
    if b < 100 {
        return Err(Error::InvalidParameter(format!("at least 100 bootstrap replicates are needed, got {b}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must lie in (0, 1), got {level}")));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension("design and response differ in length".into()));
    }
    let n = y.nrows();
    let (k, p) = (x.ncols(), y.ncols());
    let draws: Vec<Option<DMatrix<f64>>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let yb = y.select_rows(&idx);
            let xb = x.select_rows(&idx);
            match estimate_alpha(&yb, &xb, spec, model, opts) {
                Ok(a) => Some(a),
                Err(e) => {
                    log::debug!("bootstrap replicate {rep} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let ok: Vec<DMatrix<f64>> = draws.into_iter().flatten().collect();
    let failed = b - ok.len();
    if failed as f64 > 0.05 * b as f64 {
        return Err(Error::ReplicateFailures { failed, total: b });
    }
    if failed > 0 {
        log::warn!("{failed} of {b} bootstrap replicates failed and were skipped");
    }
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = (1.0 + level) / 2.0;
    let mut ci_lower = DMatrix::zeros(k, p);
    let mut ci_upper = DMatrix::zeros(k, p);
    let mut se_boot = DMatrix::zeros(k, p);
    let m = ok.len() as f64;
    for a in 0..k {
        for j in 0..p {
            let mut vals: Vec<f64> = ok.iter().map(|d| d[(a, j)]).collect();
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            vals.sort_by(|s, t| s.total_cmp(t));
            ci_lower[(a, j)] = quantile_sorted(&vals, lo_q);
            ci_upper[(a, j)] = quantile_sorted(&vals, hi_q);
            se_boot[(a, j)] = var.sqrt();
        }
    }
    Ok(BootstrapResult { replicates: ok.len(), failed, ci_lower, ci_upper, se_boot, seed, level })
}
