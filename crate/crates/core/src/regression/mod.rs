//! Unconditional partial effects from regressions of the RIF on covariates.
//!
//! The two-step plug-in estimator solves for `theta` first, freezes it,
//! computes the RIF of every observation and then regresses those rows on the
//! design matrix. Inference for the linear variant uses the influence
//! representation
//!
//! ```text
//! S_i = G * IF_i + vec(Omega^-1 x_i z_i')
//! ```
//!
//! where `G` is the numerical Jacobian of `vec(alpha(theta))`, `IF_i` the
//! influence value and `z_i` the regression residual.

mod bootstrap;
mod pillai;
mod spline;

pub use bootstrap::{bootstrap_ci, BootstrapResult, RifModel};
pub use pillai::{linearity_test, pillai_linearity, LinearityTest};
pub use spline::{regress_rif_splines, umqpe_splines, BSplineBasis, SplineConfig, SplineRegression};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::huber::MQuantileSpec;
use crate::linalg;
use crate::rif;
use crate::solver::MQuantileFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpeMethod {
    Linear,
    Spline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpeFit {
    /// `k x p`: rows are covariates (intercept included), columns responses.
    pub alpha: DMatrix<f64>,
    /// Asymptotic covariance of `vec(alpha)` scaled by `n` (linear only).
    pub v_hat: Option<DMatrix<f64>>,
    /// Standard errors, `sqrt(diag(v_hat) / n)`, laid out like `alpha`.
    pub se: Option<DMatrix<f64>>,
    pub spec: MQuantileSpec,
    pub method: UpeMethod,
    pub omega_x_cond: f64,
    /// Correlation matrix of the RIF.
    pub rif_correlation: DMatrix<f64>,
}

/// Least-squares coefficients of the RIF rows on `x`.
pub fn regress_rif_linear(rif: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    linalg::ols(x, rif)
}

fn check_design(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!("design has {} rows, response has {}", x.nrows(), y.nrows())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("design contains non-finite values".into()));
    }
    Ok(())
}

/// Linear UMQPE: OLS of the RIF on `x`, with the asymptotic covariance.
pub fn umqpe_linear(y: &DMatrix<f64>, x: &DMatrix<f64>, fit: &MQuantileFit) -> Result<UpeFit> {
    check_design(y, x)?;
    let sample = rif::influence(y, fit)?;
    let (alpha, omega_x_cond) = regress_rif_linear(&sample.rif_values, x)?;
    let n = y.nrows() as f64;
    let delta = sample.if_values.tr_mul(&sample.if_values) / n;
    let contributions = score_contributions(y, x, fit, &alpha)?;
    let v_hat = outer_mean(&contributions, &contributions);
    let se = standard_errors(&v_hat, alpha.nrows(), alpha.ncols(), y.nrows());
    Ok(UpeFit {
        alpha,
        v_hat: Some(v_hat),
        se: Some(se),
        spec: fit.spec.clone(),
        method: UpeMethod::Linear,
        omega_x_cond,
        rif_correlation: linalg::correlation_from_covariance(&delta),
    })
}

fn standard_errors(v_hat: &DMatrix<f64>, k: usize, p: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, p, |a, j| {
        let idx = j * k + a;
        (v_hat[(idx, idx)].max(0.0) / n as f64).sqrt()
    })
}

fn outer_mean(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.tr_mul(b) / a.nrows() as f64
}

/// `vec(alpha(theta))` with the RIF recomputed at `theta`, `M(theta)`
/// included.
fn alpha_at(y: &DMatrix<f64>, x: &DMatrix<f64>, theta: &[f64], spec: &MQuantileSpec) -> Result<DVector<f64>> {
    let sample = rif::influence_at(y, theta, spec)?;
    let (alpha, _) = linalg::ols(x, &sample.rif_values)?;
    Ok(linalg::vec_columns(&alpha))
}

/// Central-difference Jacobian (`kp x p`) of `vec(alpha)` with respect to
/// `theta`.
pub fn alpha_gradient(y: &DMatrix<f64>, x: &DMatrix<f64>, fit: &MQuantileFit) -> Result<DMatrix<f64>> {
    let p = y.ncols();
    let k = x.ncols();
    let mut grad = DMatrix::zeros(k * p, p);
    let base = fit.theta.as_slice();
    for j in 0..p {
        let h = f64::EPSILON.cbrt() * base[j].abs().max(1.0);
        let mut plus = base.to_vec();
        let mut minus = base.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let a_plus = alpha_at(y, x, &plus, &fit.spec)?;
        let a_minus = alpha_at(y, x, &minus, &fit.spec)?;
        grad.set_column(j, &((a_plus - a_minus) / (2.0 * h)));
    }
    Ok(grad)
}

/// Rows `S_i'` (`n x kp`) of the influence representation of `vec(alpha)`.
pub fn score_contributions(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    fit: &MQuantileFit,
    alpha: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_design(y, x)?;
    let (n, p, k) = (y.nrows(), y.ncols(), x.ncols());
    if alpha.nrows() != k || alpha.ncols() != p {
        return Err(Error::Dimension("alpha does not match the design".into()));
    }
    let sample = rif::influence(y, fit)?;
    let omega = x.tr_mul(x) / n as f64;
    let omega_inv = linalg::checked_inverse(&omega).map_err(|condition| Error::RankDeficient { condition })?;
    let grad = alpha_gradient(y, x, fit)?;
    // z_i = RIF_i - alpha' x_i
    let z = &sample.rif_values - x * alpha;
    // rows of X Omega^-1 (Omega symmetric)
    let lever = x * &omega_inv;
    let mut s = &sample.if_values * grad.transpose();
    for i in 0..n {
        for j in 0..p {
            let zij = z[(i, j)];
            for a in 0..k {
                s[(i, j * k + a)] += lever[(i, a)] * zij;
            }
        }
    }
    Ok(s)
}

/// `V_hat = (1/n) sum_i S_i S_i'` for a linear UMQPE fit.
pub fn asymptotic_covariance(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    fit: &MQuantileFit,
    upe: &UpeFit,
) -> Result<DMatrix<f64>> {
    if upe.method != UpeMethod::Linear {
        return Err(Error::InvalidParameter("asymptotic covariance is only available for the linear RIF model".into()));
    }
    let s = score_contributions(y, x, fit, &upe.alpha)?;
    Ok(outer_mean(&s, &s))
}

/// Joint covariance of `vec(alpha)` over several directions sharing `tau`
/// and `c`; block `(r, s)` is `(1/n) sum_i S_i(u_r) S_i(u_s)'`.
pub fn joint_direction_covariance(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    fits: &[MQuantileFit],
    upes: &[UpeFit],
) -> Result<DMatrix<f64>> {
    if fits.is_empty() || fits.len() != upes.len() {
        return Err(Error::InvalidParameter("need one UPE fit per direction".into()));
    }
    let first = &fits[0].spec;
    for (f, u) in fits.iter().zip(upes) {
        let s = &f.spec;
        if s.tau() != first.tau() || s.huber() != first.huber() || s.eta_form() != first.eta_form() {
            return Err(Error::InvalidParameter("fits do not share tau, c and delta".into()));
        }
        if u.spec != f.spec || u.method != UpeMethod::Linear {
            return Err(Error::InvalidParameter("UPE fit does not belong to its M-quantile fit".into()));
        }
    }
    let blocks =
        fits.iter().zip(upes).map(|(f, u)| score_contributions(y, x, f, &u.alpha)).collect::<Result<Vec<_>>>()?;
    let d = blocks[0].ncols();
    let j = blocks.len();
    let mut out = DMatrix::zeros(j * d, j * d);
    for (r, sr) in blocks.iter().enumerate() {
        for (s, ss) in blocks.iter().enumerate() {
            out.view_mut((r * d, s * d), (d, d)).copy_from(&outer_mean(sr, ss));
        }
    }
    Ok(out)
}

/// Difference in mean RIF between the `x = 1` and `x = 0` groups.
pub fn upe_binary(y: &DMatrix<f64>, x_binary: &[f64], fit: &MQuantileFit) -> Result<DVector<f64>> {
    if x_binary.len() != y.nrows() {
        return Err(Error::Dimension("indicator length differs from the sample size".into()));
    }
    if let Some(v) = x_binary.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::Data(format!("indicator value {v} is not 0 or 1")));
    }
    let ones = x_binary.iter().filter(|v| **v == 1.0).count();
    let zeros = x_binary.len() - ones;
    if ones == 0 || zeros == 0 {
        return Err(Error::EmptyGroup(format!("{ones} treated and {zeros} untreated observations")));
    }
    let sample = rif::influence(y, fit)?;
    let p = y.ncols();
    let mut sum1 = DVector::zeros(p);
    let mut sum0 = DVector::zeros(p);
    for (row, g) in sample.rif_values.row_iter().zip(x_binary) {
        if *g == 1.0 {
            sum1 += row.transpose();
        } else {
            sum0 += row.transpose();
        }
    }
    Ok(sum1 / ones as f64 - sum0 / zeros as f64)
}
