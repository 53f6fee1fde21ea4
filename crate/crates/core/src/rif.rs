//! Sample M and D matrices, influence functions and the RIF covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::huber::{self, JacobianMethod, MQuantileSpec};
use crate::linalg;
use crate::solver::{row_major, MQuantileFit};

#[derive(Debug, Clone, PartialEq)]
pub struct RifMatrices {
    /// Minus the mean Jacobian of the score at `theta`.
    pub m_hat: DMatrix<f64>,
    /// Mean outer product of the scores.
    pub d_hat: DMatrix<f64>,
    /// Covariance of the RIF, `M^-1 D M^-T`.
    pub delta_hat: DMatrix<f64>,
    /// Correlation matrix derived from `delta_hat`.
    pub r: DMatrix<f64>,
    /// Asymptotic covariance of `theta`, `M^-1 D M^-T / n`.
    pub theta_cov: DMatrix<f64>,
    pub m_condition: f64,
    /// Observations left out of `m_hat` because their residual is zero.
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RifSample {
    /// `n x p`, one influence value per observation.
    pub if_values: DMatrix<f64>,
    /// `theta + IF`, row by row.
    pub rif_values: DMatrix<f64>,
}

fn require_converged(fit: &MQuantileFit) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::NonConvergence(format!("M-quantile fit stopped with equation norm {:e}", fit.eq_norm)))
    }
}

/// `M(theta)` and the number of zero-residual rows skipped, at an arbitrary
/// `theta`.
pub fn m_matrix_at(
    y: &DMatrix<f64>,
    theta: &[f64],
    spec: &MQuantileSpec,
    method: JacobianMethod,
) -> Result<(DMatrix<f64>, usize)> {
    m_with_scale(y, theta, spec, method).map(|(m, skipped, _)| (m, skipped))
}

/// Also returns the mean IRLS weight, the natural magnitude of `M`.
fn m_with_scale(
    y: &DMatrix<f64>,
    theta: &[f64],
    spec: &MQuantileSpec,
    method: JacobianMethod,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let p = y.ncols();
    let rows = row_major(y);
    let mut acc = DMatrix::<f64>::zeros(p, p);
    let mut used = 0usize;
    let mut weight_sum = 0.0;
    let kernel = spec.kernel();
    let h = huber::default_step(theta);
    for yi in rows.chunks_exact(p) {
        let r: Vec<f64> = yi.iter().zip(theta).map(|(a, b)| a - b).collect();
        weight_sum += kernel.eval(&r).weight();
        let jac = match method {
            JacobianMethod::CentralDiff => {
                if huber::norm(&r) <= kernel.eps {
                    continue;
                }
                huber::central_jacobian(&kernel, &r, h)
            }
            JacobianMethod::AnalyticLimit => match huber::score_jacobian(yi, theta, spec, method) {
                Ok(j) => j,
                Err(Error::SingularResidual { .. }) => continue,
                Err(e) => return Err(e),
            },
        };
        acc += jac;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateData("every residual is zero".into()));
    }
    let n_rows = rows.len() / p;
    Ok((acc / -(used as f64), n_rows - used, weight_sum / used as f64))
}

/// Inverse of `M`, or the singular-M error. A matrix that is negligible
/// next to the mean weight is singular even if well conditioned.
fn invert_m(m: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    if m.norm() <= 1e-8 * scale {
        return Err(Error::SingularM { condition: f64::INFINITY });
    }
    linalg::checked_inverse(m).map_err(|condition| Error::SingularM { condition })
}

/// `M_hat` at the fitted `theta`, by central differences.
pub fn m_matrix(y: &DMatrix<f64>, fit: &MQuantileFit) -> Result<DMatrix<f64>> {
    m_matrix_with(y, fit, JacobianMethod::CentralDiff)
}

pub fn m_matrix_with(y: &DMatrix<f64>, fit: &MQuantileFit, method: JacobianMethod) -> Result<DMatrix<f64>> {
    require_converged(fit)?;
    let (m, _, scale) = m_with_scale(y, fit.theta.as_slice(), &fit.spec, method)?;
    invert_m(&m, scale)?;
    Ok(m)
}

/// Scores `eta_i psi(y_i - theta)` as rows of an `n x p` matrix.
pub fn scores_at(y: &DMatrix<f64>, theta: &[f64], spec: &MQuantileSpec) -> DMatrix<f64> {
    let (n, p) = (y.nrows(), y.ncols());
    let kernel = spec.kernel();
    let rows = row_major(y);
    let mut out = vec![0.0; n * p];
    let mut r = vec![0.0; p];
    for (yi, oi) in rows.chunks_exact(p).zip(out.chunks_exact_mut(p)) {
        for j in 0..p {
            r[j] = yi[j] - theta[j];
        }
        kernel.score_into(&r, oi);
    }
    DMatrix::from_row_slice(n, p, &out)
}

pub fn d_matrix(y: &DMatrix<f64>, fit: &MQuantileFit) -> Result<DMatrix<f64>> {
    require_converged(fit)?;
    let s = scores_at(y, fit.theta.as_slice(), &fit.spec);
    Ok(s.tr_mul(&s) / y.nrows() as f64)
}

/// IF and RIF values at an arbitrary `theta`, recomputing `M(theta)`.
pub fn influence_at(y: &DMatrix<f64>, theta: &[f64], spec: &MQuantileSpec) -> Result<RifSample> {
    let (m, _, scale) = m_with_scale(y, theta, spec, JacobianMethod::CentralDiff)?;
    let m_inv = invert_m(&m, scale)?;
    Ok(influence_from(y, theta, spec, &m_inv))
}

fn influence_from(y: &DMatrix<f64>, theta: &[f64], spec: &MQuantileSpec, m_inv: &DMatrix<f64>) -> RifSample {
    let s = scores_at(y, theta, spec);
    let if_values = s * m_inv.transpose();
    let mut rif_values = if_values.clone();
    for mut row in rif_values.row_iter_mut() {
        for (v, t) in row.iter_mut().zip(theta) {
            *v += t;
        }
    }
    RifSample { if_values, rif_values }
}

pub fn influence(y: &DMatrix<f64>, fit: &MQuantileFit) -> Result<RifSample> {
    require_converged(fit)?;
    influence_at(y, fit.theta.as_slice(), &fit.spec)
}

pub fn rif_covariance(y: &DMatrix<f64>, fit: &MQuantileFit) -> Result<RifMatrices> {
    require_converged(fit)?;
    let theta = fit.theta.as_slice();
    let (m_hat, skipped_rows, scale) = m_with_scale(y, theta, &fit.spec, JacobianMethod::CentralDiff)?;
    let m_condition = linalg::condition_number(&m_hat);
    let m_inv = invert_m(&m_hat, scale)?;
    let n = y.nrows() as f64;
    let s = scores_at(y, theta, &fit.spec);
    let d_hat = s.tr_mul(&s) / n;
    let ifs = &s * m_inv.transpose();
    let delta_hat = ifs.tr_mul(&ifs) / n;
    let r = linalg::correlation_from_covariance(&delta_hat);
    let theta_cov = &m_inv * &d_hat * m_inv.transpose() / n;
    Ok(RifMatrices { m_hat, d_hat, delta_hat, r, theta_cov, m_condition, skipped_rows })
}

/// Mean of the RIF rows; equals `theta` at a converged fit.
pub fn rif_mean(sample: &RifSample) -> DVector<f64> {
    linalg::column_means(&sample.rif_values)
}
