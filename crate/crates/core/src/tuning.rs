//! K-fold cross-validation of the Huber tuning constant.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::huber::MQuantileSpec;
use crate::solver::{fit_unconditional, IrlsOptions};

/// Smallest grid value.
pub const C_MIN: f64 = 0.1;

/// Scores within this relative distance of the minimum count as ties.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub grid: Vec<f64>,
    /// Mean squared held-out prediction error per grid value; `NaN` where a
    /// fold fit failed.
    pub cv_scores: Vec<f64>,
    pub c_star: f64,
    pub folds: usize,
    pub fold_assignment: Vec<usize>,
    pub seed: u64,
}

impl CvResult {
    pub fn c_star_index(&self) -> usize {
        self.grid.iter().position(|c| *c == self.c_star).unwrap_or(0)
    }
}

/// `n_grid` equally spaced values from 0.1 to the largest row norm of `y`.
pub fn c_grid(y: &DMatrix<f64>, n_grid: usize) -> Result<Vec<f64>> {
    if n_grid < 2 {
        return Err(Error::InvalidParameter("the grid needs at least two values".into()));
    }
    let c_max = y.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    if !(c_max > C_MIN) {
        return Err(Error::DegenerateData(format!("largest row norm {c_max} does not exceed {C_MIN}")));
    }
    let step = (c_max - C_MIN) / (n_grid - 1) as f64;
    let mut grid: Vec<f64> = (0..n_grid).map(|i| C_MIN + step * i as f64).collect();
    grid[n_grid - 1] = c_max;
    Ok(grid)
}

/// Seeded partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, i) in order.into_iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

/// Held-out squared error summed over one fold, or `None` if the fit failed.
fn fold_loss(y: &DMatrix<f64>, folds: &[usize], fold: usize, spec: &MQuantileSpec, opts: &IrlsOptions) -> Option<f64> {
    let train: Vec<usize> = (0..y.nrows()).filter(|&i| folds[i] != fold).collect();
    let fit = fit_unconditional(&y.select_rows(&train), spec, opts).ok()?;
    if !fit.converged {
        return None;
    }
    let loss =
        (0..y.nrows()).filter(|&i| folds[i] == fold).map(|i| (y.row(i).transpose() - &fit.theta).norm_squared()).sum();
    Some(loss)
}

/// Cross-validates `c` over `grid` for the direction and `tau` of `spec`
/// (its own `c` is ignored). Every fold fit starts cold from the median.
pub fn cross_validate(
    y: &DMatrix<f64>,
    spec: &MQuantileSpec,
    folds: usize,
    grid: &[f64],
    seed: u64,
    opts: &IrlsOptions,
) -> Result<CvResult> {
    let n = y.nrows();
    if folds < 2 {
        return Err(Error::InvalidParameter("K must be >= 2".into()));
    }
    if n < 2 * folds {
        return Err(Error::InvalidParameter(format!("n = {n} is below 2K = {}", 2 * folds)));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("grid must be strictly increasing".into()));
    }
    let specs = grid.iter().map(|&c| spec.with_c(c)).collect::<Result<Vec<_>>>()?;
    let assignment = fold_assignment(n, folds, seed);
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..folds).map(move |f| (g, f))).collect();
    let losses: Vec<Option<f64>> =
        jobs.par_iter().map(|&(g, f)| fold_loss(y, &assignment, f, &specs[g], opts)).collect();
    let cv_scores: Vec<f64> = losses
        .chunks(folds)
        .zip(grid)
        .map(|(chunk, c)| {
            if chunk.iter().any(Option::is_none) {
                log::warn!("excluding c = {c}: a fold fit failed");
                f64::NAN
            } else {
                chunk.iter().flatten().sum::<f64>() / n as f64
            }
        })
        .collect();
    let best = cv_scores.iter().copied().filter(|s| s.is_finite()).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::NonConvergence("every grid value had a failed fold".into()));
    }
    let idx = cv_scores
        .iter()
        .position(|s| s.is_finite() && *s <= best + TIE_TOLERANCE * best.abs().max(f64::MIN_POSITIVE))
        .expect("a finite minimum exists");
    Ok(CvResult { grid: grid.to_vec(), cv_scores, c_star: grid[idx], folds, fold_assignment: assignment, seed })
}
