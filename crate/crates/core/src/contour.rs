//! M-quantile contours: the vertices `theta(tau, u)` traced as `u` sweeps the
//! unit sphere.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::huber::{HuberParams, MQuantileSpec};
use crate::solver::{fit_unconditional, IrlsInit, IrlsOptions, MQuantileFit};

/// Default number of directions in the plane.
pub const DEFAULT_DIRECTIONS: usize = 360;

#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub tau: f64,
    pub c: f64,
    /// In angular order when `p = 2`.
    pub directions: Vec<DVector<f64>>,
    /// One row per direction; `NaN` where no fit was obtained.
    pub vertices: DMatrix<f64>,
    pub converged: Vec<bool>,
}

impl ContourSet {
    pub fn dim(&self) -> usize {
        self.vertices.ncols()
    }

    /// Converged vertices as plane points, in order.
    fn polygon(&self) -> Vec<[f64; 2]> {
        (0..self.vertices.nrows())
            .filter(|&i| self.converged[i])
            .map(|i| [self.vertices[(i, 0)], self.vertices[(i, 1)]])
            .collect()
    }
}

/// Equally spaced angles for `p = 2`, normalised Gaussian draws otherwise.
pub fn direction_grid(p: usize, m: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if m < 3 {
        return Err(Error::InvalidParameter("at least three directions are needed".into()));
    }
    match p {
        0 | 1 => Err(Error::Dimension("contours need p >= 2".into())),
        2 => Ok((0..m)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / m as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect()),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(m);
            while out.len() < m {
                let v = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
                let norm: f64 = v.norm();
                if norm > 1e-8 {
                    out.push(v / norm);
                }
            }
            Ok(out)
        }
    }
}

fn solve(y: &DMatrix<f64>, spec: &MQuantileSpec, opts: &IrlsOptions) -> Option<MQuantileFit> {
    match fit_unconditional(y, spec, opts) {
        Ok(f) => Some(f),
        Err(e) => {
            log::debug!("direction fit failed: {e}");
            None
        }
    }
}

/// Solves one direction, falling back to the default start when a warm
/// start does not converge.
fn solve_direction(
    y: &DMatrix<f64>,
    spec: &MQuantileSpec,
    opts: &IrlsOptions,
    warm: Option<&DVector<f64>>,
) -> Option<MQuantileFit> {
    if let Some(theta) = warm {
        let warm_opts = IrlsOptions { init: IrlsInit::Given(theta.as_slice().to_vec()), ..opts.clone() };
        if let Some(f) = solve(y, spec, &warm_opts).filter(|f| f.converged) {
            return Some(f);
        }
    }
    solve(y, spec, opts)
}

/// Fits `theta(tau, u)` for `m` directions. In the plane the sweep is
/// sequential and warm-started from the previous direction; in higher
/// dimensions directions are solved independently in parallel. A direction
/// that fails is flagged rather than aborting the contour.
pub fn contour(
    y: &DMatrix<f64>,
    tau: f64,
    huber: HuberParams,
    m: usize,
    seed: u64,
    opts: &IrlsOptions,
) -> Result<ContourSet> {
    let p = y.ncols();
    let directions = direction_grid(p, m, seed)?;
    let base = MQuantileSpec::new(tau, directions[0].as_slice(), huber)?;
    let fits: Vec<Option<MQuantileFit>> = if p == 2 {
        let mut out: Vec<Option<MQuantileFit>> = Vec::with_capacity(m);
        for u in &directions {
            let spec = base.with_direction(u.as_slice())?;
            let warm = out.iter().rev().flatten().find(|f| f.converged).map(|f| &f.theta);
            out.push(solve_direction(y, &spec, opts, warm));
        }
        out
    } else {
        directions
            .par_iter()
            .map(|u| base.with_direction(u.as_slice()).ok().and_then(|s| solve_direction(y, &s, opts, None)))
            .collect()
    };
    let mut vertices = DMatrix::from_element(m, p, f64::NAN);
    let mut converged = vec![false; m];
    for (i, fit) in fits.iter().enumerate() {
        if let Some(f) = fit {
            vertices.set_row(i, &f.theta.transpose());
            converged[i] = f.converged;
        }
    }
    let failures = converged.iter().filter(|c| !**c).count();
    if failures > 0 {
        log::warn!("{failures} of {m} contour directions did not converge");
    }
    Ok(ContourSet { tau, c: huber.c(), directions, vertices, converged })
}

fn on_segment(pt: [f64; 2], a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
    let cross = (b[0] - a[0]) * (pt[1] - a[1]) - (b[1] - a[1]) * (pt[0] - a[0]);
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if cross.abs() > tol * len.max(1.0) {
        return false;
    }
    pt[0] >= a[0].min(b[0]) - tol
        && pt[0] <= a[0].max(b[0]) + tol
        && pt[1] >= a[1].min(b[1]) - tol
        && pt[1] <= a[1].max(b[1]) + tol
}

/// Ray casting; points on the boundary count as inside.
pub fn point_in_polygon(pt: [f64; 2], polygon: &[[f64; 2]]) -> bool {
    let m = polygon.len();
    if m == 0 {
        return false;
    }
    let scale = polygon.iter().flat_map(|v| v.iter()).fold(1.0_f64, |s, x| s.max(x.abs()));
    let tol = 1e-12 * scale;
    let mut inside = false;
    for i in 0..m {
        let a = polygon[i];
        let b = polygon[(i + 1) % m];
        if on_segment(pt, a, b, tol) {
            return true;
        }
        if (a[1] > pt[1]) != (b[1] > pt[1]) {
            let x = a[0] + (pt[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if pt[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestingReport {
    pub nested: bool,
    /// Indices of converged inner vertices outside the outer polygon.
    pub violations: Vec<usize>,
}

/// Checks that every converged vertex of `inner` lies in the polygon of
/// `outer`. `inner` must be the deeper level (`min(tau, 1 - tau)` at least
/// as large).
pub fn nesting_report(inner: &ContourSet, outer: &ContourSet) -> Result<NestingReport> {
    if inner.dim() != 2 || outer.dim() != 2 {
        return Err(Error::Dimension("nesting is only defined for p = 2".into()));
    }
    if inner.c != outer.c {
        return Err(Error::InvalidParameter("contours use different tuning constants".into()));
    }
    let depth = |t: f64| t.min(1.0 - t);
    if depth(inner.tau) < depth(outer.tau) {
        return Err(Error::InvalidParameter("the inner contour must have the deeper level".into()));
    }
    let polygon = outer.polygon();
    let violations: Vec<usize> = (0..inner.vertices.nrows())
        .filter(|&i| inner.converged[i])
        .filter(|&i| !point_in_polygon([inner.vertices[(i, 0)], inner.vertices[(i, 1)]], &polygon))
        .collect();
    Ok(NestingReport { nested: violations.is_empty(), violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn planar_grid() {
        let g = direction_grid(2, 4, 0).unwrap();
        let expected = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (u, e) in g.iter().zip(expected) {
            assert!((u[0] - e[0]).abs() < 1e-15 && (u[1] - e[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn sphere_grid_is_unit_and_seeded() {
        let a = direction_grid(3, 500, 9).unwrap();
        assert_eq!(a, direction_grid(3, 500, 9).unwrap());
        assert!(a.iter().all(|u| (u.norm() - 1.0).abs() < 1e-12));
        assert!(direction_grid(2, 2, 0).is_err());
    }

    #[test]
    fn median_level_large_c_collapses_to_mean() {
        let y = gaussian(300, 1);
        let set = contour(&y, 0.5, HuberParams::new(1e6, 1.0).unwrap(), 12, 0, &IrlsOptions::default()).unwrap();
        let mean = y.row_mean();
        for i in 0..12 {
            assert!(set.converged[i]);
            assert!((set.vertices.row(i) - &mean).amax() < 1e-9);
        }
    }

    #[test]
    fn contours_nest() {
        let y = gaussian(1000, 2);
        let h = HuberParams::new(0.0, 1.0).unwrap();
        let outer = contour(&y, 0.1, h, 60, 0, &IrlsOptions::default()).unwrap();
        let inner = contour(&y, 0.3, h, 60, 0, &IrlsOptions::default()).unwrap();
        assert!(outer.converged.iter().all(|c| *c));
        let r = nesting_report(&inner, &outer).unwrap();
        assert!(r.nested, "{:?}", r.violations);
        assert!(nesting_report(&outer, &outer).unwrap().nested);
        assert!(nesting_report(&outer, &inner).is_err());
    }

    #[test]
    fn scaled_polygon_violates() {
        let y = gaussian(400, 3);
        let h = HuberParams::new(1.0, 1.0).unwrap();
        let outer = contour(&y, 0.2, h, 24, 0, &IrlsOptions::default()).unwrap();
        let mut inner = outer.clone();
        let centroid = outer.vertices.row_mean();
        for i in 0..24 {
            let v = (outer.vertices.row(i) - &centroid) * 2.0 + &centroid;
            inner.vertices.set_row(i, &v);
        }
        let r = nesting_report(&inner, &outer).unwrap();
        assert!(!r.nested);
        assert_eq!(r.violations, (0..24).collect::<Vec<_>>());
    }

    #[test]
    fn reflected_levels_give_same_contour() {
        let y = gaussian(300, 4);
        let h = HuberParams::new(1.0, 1.0).unwrap();
        let a = contour(&y, 0.2, h, 8, 0, &IrlsOptions::default()).unwrap();
        let b = contour(&y, 0.8, h, 8, 0, &IrlsOptions::default()).unwrap();
        // theta(0.8, u) = theta(0.2, -u): direction i + 4 is -u_i
        for i in 0..8 {
            assert!((a.vertices.row(i) - b.vertices.row((i + 4) % 8)).amax() < 1e-7);
        }
    }

    #[test]
    fn rotation_equivariance() {
        let y = gaussian(300, 5);
        let h = HuberParams::new(0.5, 1.0).unwrap();
        // rotating by a multiple of the grid spacing maps the grid to itself
        let m = 12;
        let a = std::f64::consts::TAU * 3.0 / m as f64;
        let q = DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()]);
        let yr = &y * q.transpose();
        let base = contour(&y, 0.25, h, m, 0, &IrlsOptions::default()).unwrap();
        let rot = contour(&yr, 0.25, h, m, 0, &IrlsOptions::default()).unwrap();
        for i in 0..m {
            let expected = &q * base.vertices.row(i).transpose();
            let got = rot.vertices.row((i + 3) % m).transpose();
            assert!((expected - got).amax() < 1e-6);
        }
    }

    #[test]
    fn higher_dimension_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = DMatrix::from_fn(200, 3, |_, _| rng.random::<f64>());
        let set = contour(&y, 0.2, HuberParams::new(1.0, 1.0).unwrap(), 20, 3, &IrlsOptions::default()).unwrap();
        assert_eq!(set.vertices.nrows(), 20);
        assert!(set.converged.iter().all(|c| *c));
    }

    #[test]
    fn polygon_boundary_counts() {
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(point_in_polygon([0.5, 0.5], &square));
        assert!(point_in_polygon([1.0, 0.5], &square));
        assert!(point_in_polygon([0.0, 0.0], &square));
        assert!(!point_in_polygon([1.5, 0.5], &square));
    }
}
