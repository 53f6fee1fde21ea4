//! Regression B-splines for the nonparametric RIF model.

use nalgebra::DMatrix;

use super::{UpeFit, UpeMethod};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rif;
use crate::solver::MQuantileFit;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineConfig {
    /// Columns of the design expanded into a B-spline basis.
    pub covariate_indices: Vec<usize>,
    pub degree: usize,
    /// Interior knots, placed at equally spaced sample quantiles.
    pub interior_knots: usize,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self { covariate_indices: Vec::new(), degree: 3, interior_knots: 5 }
    }
}

/// Clamped B-spline basis on `[knots[0], knots[last]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl BSplineBasis {
    /// Full knot vector (boundary knots repeated `degree + 1` times).
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParameter("spline degree must be >= 1".into()));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::KnotDegeneracy("too few knots for the degree".into()));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::KnotDegeneracy("knots must be non-decreasing".into()));
        }
        if knots[0] >= knots[knots.len() - 1] {
            return Err(Error::KnotDegeneracy("boundary knots coincide".into()));
        }
        Ok(Self { knots, degree })
    }

    /// Basis clamped at the data range with interior knots at the
    /// `j / (interior + 1)` quantiles of `x`.
    pub fn from_data(x: &[f64], degree: usize, interior: usize) -> Result<Self> {
        let mut sorted: Vec<f64> = x.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() < interior + degree + 1 {
            return Err(Error::KnotDegeneracy(format!(
                "{} distinct values cannot support {} interior knots of degree {}",
                distinct.len(),
                interior,
                degree
            )));
        }
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let mut inner: Vec<f64> =
            (1..=interior).map(|j| quantile_sorted(&sorted, j as f64 / (interior + 1) as f64)).collect();
        let before = inner.len();
        inner.dedup();
        inner.retain(|k| *k > lo && *k < hi);
        if inner.len() < before {
            log::warn!("collapsed {} duplicate spline knots", before - inner.len());
        }
        let mut knots = vec![lo; degree + 1];
        knots.extend(inner);
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Self::new(knots, degree)
    }

    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// All basis functions of degree `d` at `x` (Cox-de Boor).
    fn values_of_degree(&self, x: f64, d: usize) -> Vec<f64> {
        let t = &self.knots;
        let m = t.len() - 1;
        let lo = t[0];
        let hi = t[m];
        let x = x.clamp(lo, hi);
        let mut b = vec![0.0; m];
        // the right boundary belongs to the last non-empty interval
        let span = if x >= hi {
            (0..m).rev().find(|&i| t[i] < t[i + 1]).unwrap_or(0)
        } else {
            (0..m).find(|&i| t[i] <= x && x < t[i + 1]).unwrap_or(0)
        };
        b[span] = 1.0;
        for k in 1..=d {
            for i in 0..(m - k) {
                let mut v = 0.0;
                let d1 = t[i + k] - t[i];
                if d1 > 0.0 {
                    v += (x - t[i]) / d1 * b[i];
                }
                let d2 = t[i + k + 1] - t[i + 1];
                if d2 > 0.0 {
                    v += (t[i + k + 1] - x) / d2 * b[i + 1];
                }
                b[i] = v;
            }
        }
        b.truncate(m - d);
        b
    }

    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        self.values_of_degree(x, self.degree)
    }

    /// First derivatives of the basis functions at `x`.
    pub fn derivative(&self, x: f64) -> Vec<f64> {
        let d = self.degree;
        let t = &self.knots;
        let lower = self.values_of_degree(x, d - 1);
        (0..self.len())
            .map(|i| {
                let mut v = 0.0;
                let d1 = t[i + d] - t[i];
                if d1 > 0.0 {
                    v += d as f64 / d1 * lower[i];
                }
                let d2 = t[i + d + 1] - t[i + 1];
                if d2 > 0.0 {
                    v -= d as f64 / d2 * lower[i + 1];
                }
                v
            })
            .collect()
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Result of regressing the RIF on a spline-expanded design.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineRegression {
    /// Average partial effects laid out like the original design (`k x p`).
    pub alpha: DMatrix<f64>,
    pub coefficients: DMatrix<f64>,
    pub design: DMatrix<f64>,
    pub bases: Vec<(usize, BSplineBasis)>,
    pub omega_cond: f64,
}

fn is_constant_one(x: &DMatrix<f64>, col: usize) -> bool {
    x.column(col).iter().all(|v| *v == 1.0)
}

/// Expanded design: non-selected columns are copied, each selected column is
/// replaced by its B-spline basis. The first basis function is dropped when
/// it would be collinear with an intercept or an earlier basis.
/// Covariate column, its basis, and the design columns holding that basis.
pub(crate) type ExpandedTerm = (usize, BSplineBasis, Vec<usize>);

pub(crate) fn expand_design(x: &DMatrix<f64>, cfg: &SplineConfig) -> Result<(DMatrix<f64>, Vec<ExpandedTerm>)> {
    let k = x.ncols();
    if cfg.degree == 0 {
        return Err(Error::InvalidParameter("spline degree must be >= 1".into()));
    }
    for &j in &cfg.covariate_indices {
        if j >= k {
            return Err(Error::Dimension(format!("covariate index {j} out of range")));
        }
    }
    let mut has_constant = (0..k).any(|j| !cfg.covariate_indices.contains(&j) && is_constant_one(x, j));
    let n = x.nrows();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut expanded = Vec::new();
    for j in 0..k {
        if !cfg.covariate_indices.contains(&j) {
            columns.push(x.column(j).iter().copied().collect());
            continue;
        }
        let xs: Vec<f64> = x.column(j).iter().copied().collect();
        let basis = BSplineBasis::from_data(&xs, cfg.degree, cfg.interior_knots)?;
        let skip = usize::from(has_constant);
        has_constant = true;
        let values: Vec<Vec<f64>> = xs.iter().map(|v| basis.evaluate(*v)).collect();
        let mut idx = Vec::new();
        for b in skip..basis.len() {
            idx.push(columns.len());
            columns.push(values.iter().map(|row| row[b]).collect());
        }
        expanded.push((j, basis, idx));
    }
    let design = DMatrix::from_fn(n, columns.len(), |i, c| columns[c][i]);
    Ok((design, expanded))
}

/// Regress `rif` on the spline-expanded design and average the derivative
/// of the fitted curve over the sample for every expanded covariate.
pub fn regress_rif_splines(rif: &DMatrix<f64>, x: &DMatrix<f64>, cfg: &SplineConfig) -> Result<SplineRegression> {
    let (design, expanded) = expand_design(x, cfg)?;
    let (coef, omega_cond) = linalg::ols(&design, rif)?;
    let (n, p, k) = (x.nrows(), rif.ncols(), x.ncols());
    let mut alpha = DMatrix::zeros(k, p);
    // copied columns keep their linear coefficient
    let mut col = 0;
    for j in 0..k {
        if let Some((_, basis, idx)) = expanded.iter().find(|(c, _, _)| *c == j) {
            let skip = basis.len() - idx.len();
            for i in 0..n {
                let deriv = basis.derivative(x[(i, j)]);
                for (b, &dc) in idx.iter().enumerate() {
                    let db = deriv[b + skip];
                    for r in 0..p {
                        alpha[(j, r)] += coef[(dc, r)] * db;
                    }
                }
            }
            for r in 0..p {
                alpha[(j, r)] /= n as f64;
            }
            col += idx.len();
        } else {
            for r in 0..p {
                alpha[(j, r)] = coef[(col, r)];
            }
            col += 1;
        }
    }
    let bases = expanded.into_iter().map(|(j, b, _)| (j, b)).collect();
    Ok(SplineRegression { alpha, coefficients: coef, design, bases, omega_cond })
}

/// Spline UMQPE; inference for this variant is bootstrap only.
pub fn umqpe_splines(y: &DMatrix<f64>, x: &DMatrix<f64>, fit: &MQuantileFit, cfg: &SplineConfig) -> Result<UpeFit> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension("design and response differ in length".into()));
    }
    let sample = rif::influence(y, fit)?;
    let reg = regress_rif_splines(&sample.rif_values, x, cfg)?;
    let delta = sample.if_values.tr_mul(&sample.if_values) / y.nrows() as f64;
    Ok(UpeFit {
        alpha: reg.alpha,
        v_hat: None,
        se: None,
        spec: fit.spec.clone(),
        method: UpeMethod::Spline,
        omega_x_cond: reg.omega_cond,
        rif_correlation: linalg::correlation_from_covariance(&delta),
    })
}
