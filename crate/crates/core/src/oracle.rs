//! Reference implementations and simulation drivers used to check the
//! estimators. Nothing here calls into the solver or RIF code except the
//! coverage driver, which exercises them end to end.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::huber::MQuantileSpec;
use crate::regression::umqpe_linear;
use crate::solver::{fit_unconditional, IrlsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgpKind {
    GaussianLinear,
    /// Gaussian linear model where a fraction of rows get Cauchy errors.
    Contaminated,
    /// Gaussian linear model with equicorrelated errors.
    CorrelatedGaussian,
}

impl DgpKind {
    pub fn name(&self) -> &'static str {
        match self {
            DgpKind::GaussianLinear => "gaussian-linear",
            DgpKind::Contaminated => "contaminated",
            DgpKind::CorrelatedGaussian => "correlated-gaussian",
        }
    }
}

impl std::str::FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-linear" => Ok(DgpKind::GaussianLinear),
            "contaminated" => Ok(DgpKind::Contaminated),
            "correlated-gaussian" => Ok(DgpKind::CorrelatedGaussian),
            other => Err(Error::InvalidParameter(format!("unknown DGP kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub kind: DgpKind,
    pub n: usize,
    /// `k x p` coefficients; row 0 multiplies the intercept.
    pub b: DMatrix<f64>,
    pub noise_scale: f64,
    pub correlation: f64,
    pub contamination_rate: f64,
    pub seed: u64,
}

impl DgpConfig {
    /// Two responses on an intercept and two standard normal covariates.
    pub fn new(kind: DgpKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            b: DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 2.0, -0.75, 0.25]),
            noise_scale: 1.0,
            correlation: if kind == DgpKind::CorrelatedGaussian { 0.5 } else { 0.0 },
            contamination_rate: if kind == DgpKind::Contaminated { 0.1 } else { 0.0 },
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidParameter("DGP needs n >= 10".into()));
        }
        if !(0.0..1.0).contains(&self.contamination_rate) {
            return Err(Error::InvalidParameter("contamination rate must lie in [0, 1)".into()));
        }
        if self.correlation.abs() >= 1.0 {
            return Err(Error::InvalidParameter("|correlation| must be < 1".into()));
        }
        if self.b.nrows() == 0 || self.b.ncols() == 0 {
            return Err(Error::Dimension("empty coefficient matrix".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidParameter("noise scale must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub y: DMatrix<f64>,
    /// Design including the intercept column.
    pub x: DMatrix<f64>,
}

/// Draws a dataset from stream 0 of the configured seed.
pub fn simulate(cfg: &DgpConfig) -> Result<SimulatedData> {
    simulate_stream(cfg, 0)
}

/// Draws a dataset from an independent stream of the configured seed.
/// Contaminated and clean draws with the same seed and stream share `x` and
/// the Gaussian errors of every uncontaminated row.
pub fn simulate_stream(cfg: &DgpConfig, stream: u64) -> Result<SimulatedData> {
    cfg.validate()?;
    let (k, p, n) = (cfg.b.nrows(), cfg.b.ncols(), cfg.n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2 * stream);
    let x = DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let mut eps = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    if cfg.kind == DgpKind::CorrelatedGaussian {
        let rho = cfg.correlation;
        let sigma = DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 } else { rho });
        let chol = sigma
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter(format!("correlation {rho} is not valid for p = {p}")))?;
        eps *= chol.l().transpose();
    }
    if cfg.kind == DgpKind::Contaminated && cfg.contamination_rate > 0.0 {
        let mut crng = ChaCha8Rng::seed_from_u64(cfg.seed);
        crng.set_stream(2 * stream + 1);
        let cauchy = StudentT::new(1.0).expect("valid degrees of freedom");
        for i in 0..n {
            let hit = crng.random::<f64>() < cfg.contamination_rate;
            let draws: Vec<f64> = (0..p).map(|_| cauchy.sample(&mut crng)).collect();
            if hit {
                for (j, d) in draws.into_iter().enumerate() {
                    eps[(i, j)] = d;
                }
            }
        }
    }
    let y = &x * &cfg.b + eps * cfg.noise_scale;
    Ok(SimulatedData { y, x })
}

/// Direction weight written out directly from its definition.
fn reference_eta(cos_phi: f64, tau: f64, delta: f64) -> f64 {
    let zeta = 1.0 - 2.0 * tau;
    if cos_phi > 0.0 {
        (1.0 - cos_phi).powf(delta) * zeta + 2.0 * tau
    } else {
        -(1.0 + cos_phi).powf(delta) * zeta + 2.0 * (1.0 - tau)
    }
}

/// Mean score at `theta`, computed without touching the solver code.
pub fn reference_equation(y: &DMatrix<f64>, theta: &[f64], spec: &MQuantileSpec) -> DVector<f64> {
    let p = y.ncols();
    let c = spec.huber().c();
    let delta = spec.huber().delta();
    let u = spec.direction();
    let mut sum = vec![0.0; p];
    let mut r = vec![0.0; p];
    for i in 0..y.nrows() {
        let mut norm2 = 0.0;
        let mut dot = 0.0;
        for j in 0..p {
            r[j] = y[(i, j)] - theta[j];
            norm2 += r[j] * r[j];
            dot += u[j] * r[j];
        }
        let norm = norm2.sqrt();
        if norm <= 1e-10 {
            continue;
        }
        let eta = reference_eta(dot / norm, spec.tau(), delta);
        let scale = eta / if norm < c { c } else { norm };
        for j in 0..p {
            sum[j] += scale * r[j];
        }
    }
    let n = y.nrows() as f64;
    DVector::from_iterator(p, sum.into_iter().map(|v| v / n))
}

/// Grid search for the root of the estimating equation (`p <= 2`) with one
/// ternary refinement pass per coordinate around the best grid point.
pub fn brute_force_theta(
    y: &DMatrix<f64>,
    spec: &MQuantileSpec,
    search_box: &[(f64, f64)],
    grid_step: f64,
) -> Result<DVector<f64>> {
    let p = y.ncols();
    if p > 2 || p == 0 {
        return Err(Error::Dimension("brute force supports p <= 2 only".into()));
    }
    if search_box.len() != p {
        return Err(Error::Dimension("search box does not match the response".into()));
    }
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParameter("grid step must be positive".into()));
    }
    let axes: Vec<Vec<f64>> = search_box
        .iter()
        .map(|&(lo, hi)| {
            let m = ((hi - lo) / grid_step).floor() as usize;
            (0..=m).map(|i| lo + grid_step * i as f64).collect()
        })
        .collect();
    let objective = |t: &[f64]| reference_equation(y, t, spec).norm();
    // flat index k = i0 * len1 + i1
    let len1 = if p == 2 { axes[1].len() } else { 1 };
    let unflatten = |k: usize| -> Vec<usize> {
        if p == 1 {
            vec![k]
        } else {
            vec![k / len1, k % len1]
        }
    };
    let (best_k, _) = (0..axes[0].len() * len1)
        .into_par_iter()
        .map(|k| {
            let t: Vec<f64> = unflatten(k).iter().enumerate().map(|(d, &i)| axes[d][i]).collect();
            (k, objective(&t))
        })
        .reduce_with(|a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a })
        .expect("non-empty grid");
    let best_idx = unflatten(best_k);
    for (d, &i) in best_idx.iter().enumerate() {
        if i == 0 || i + 1 == axes[d].len() {
            return Err(Error::InvalidParameter(format!("minimizer touches the search box on axis {d}")));
        }
    }
    let mut theta: Vec<f64> = best_idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect();
    for d in 0..p {
        let (mut lo, mut hi) = (theta[d] - grid_step, theta[d] + grid_step);
        for _ in 0..60 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[d] = m1;
            b[d] = m2;
            if objective(&a) <= objective(&b) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let mut cand = theta.clone();
        cand[d] = 0.5 * (lo + hi);
        if objective(&cand) <= objective(&theta) {
            theta = cand;
        }
    }
    Ok(DVector::from_vec(theta))
}

/// Order statistic at 1-based index `ceil(n tau)`.
pub fn univariate_quantile_oracle(y: &[f64], tau: f64) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let idx = ((s.len() as f64 * tau).ceil() as usize).clamp(1, s.len());
    s[idx - 1]
}

/// Root of `sum_i w_i (y_i - e) = 0` with `w = 2 tau` above `e` and
/// `2 (1 - tau)` below, by damped fixed-point iteration.
pub fn univariate_expectile_oracle(y: &[f64], tau: f64) -> f64 {
    let mut e = y.iter().sum::<f64>() / y.len() as f64;
    for _ in 0..10_000 {
        let (mut num, mut den) = (0.0, 0.0);
        for &v in y {
            let w = if v > e { 2.0 * tau } else { 2.0 * (1.0 - tau) };
            num += w * v;
            den += w;
        }
        let next = 0.5 * e + 0.5 * num / den;
        if (next - e).abs() <= 1e-14 * e.abs().max(1.0) {
            return next;
        }
        e = next;
    }
    e
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull of the rows of an `n x 2` matrix.
pub fn convex_hull(y: &DMatrix<f64>) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = (0..y.nrows()).map(|i| [y[(i, 0)], y[(i, 1)]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &pt in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0 {
                hull.pop();
            }
            hull.push(pt);
        }
        hull.pop();
    }
    hull
}

/// Signed distance from `pt` to the boundary of a counter-clockwise convex
/// polygon; positive inside.
pub fn hull_depth(hull: &[[f64; 2]], pt: [f64; 2]) -> f64 {
    let m = hull.len();
    (0..m)
        .map(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % m];
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            cross(a, b, pt) / len
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub coverage: f64,
    pub covered: usize,
    pub intervals: usize,
    pub failed: usize,
    pub replications: usize,
}

/// Fraction of slope-entry confidence intervals `alpha +- z se` covering the
/// true slopes of `dgp.b` over `reps` independent draws.
pub fn run_coverage(dgp: &DgpConfig, spec: &MQuantileSpec, reps: usize, level: f64) -> Result<CoverageReport> {
    if reps < 100 {
        return Err(Error::InvalidParameter("coverage needs at least 100 replications".into()));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidParameter("level must lie in [0, 1)".into()));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0);
    let (k, p) = (dgp.b.nrows(), dgp.b.ncols());
    let opts = IrlsOptions::default();
    let outcomes: Vec<Option<usize>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = simulate_stream(dgp, rep).ok()?;
            let fit = fit_unconditional(&data.y, spec, &opts).ok().filter(|f| f.converged)?;
            let upe = umqpe_linear(&data.y, &data.x, &fit).ok()?;
            let se = upe.se?;
            let mut hits = 0;
            for a in 1..k {
                for j in 0..p {
                    if (upe.alpha[(a, j)] - dgp.b[(a, j)]).abs() <= z * se[(a, j)] {
                        hits += 1;
                    }
                }
            }
            Some(hits)
        })
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    if failed as f64 > 0.02 * reps as f64 {
        return Err(Error::ReplicateFailures { failed, total: reps });
    }
    let covered: usize = outcomes.iter().flatten().sum();
    let intervals = (reps - failed) * (k - 1) * p;
    Ok(CoverageReport { coverage: covered as f64 / intervals as f64, covered, intervals, failed, replications: reps })
}
