//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition threshold above which a matrix is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a square matrix, refusing ill-conditioned input.
pub fn checked_inverse(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let cond = condition_number(m);
    if !(cond <= CONDITION_LIMIT) {
        return Err(cond);
    }
    m.clone().try_inverse().ok_or(f64::INFINITY)
}

/// Least-squares fit of every column of `y` on `x`.
///
/// Returns the `k x p` coefficient matrix and the condition number of
/// `X'X / n`.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!("design has {} rows, response has {}", x.nrows(), y.nrows())));
    }
    if x.nrows() < x.ncols() {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let n = x.nrows() as f64;
    let omega = x.tr_mul(x) / n;
    let cond = condition_number(&omega);
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::RankDeficient { condition: cond });
    }
    let xty = x.tr_mul(y) / n;
    let chol = omega.clone().cholesky().ok_or(Error::RankDeficient { condition: cond })?;
    Ok((chol.solve(&xty), cond))
}

/// Weighted least squares with non-negative row weights.
pub fn weighted_ols(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &[f64]) -> Result<DMatrix<f64>> {
    let k = x.ncols();
    let mut xtwx = DMatrix::<f64>::zeros(k, k);
    let mut xtwy = DMatrix::<f64>::zeros(k, y.ncols());
    for i in 0..x.nrows() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        for a in 0..k {
            let xa = x[(i, a)] * wi;
            for b in 0..k {
                xtwx[(a, b)] += xa * x[(i, b)];
            }
            for j in 0..y.ncols() {
                xtwy[(a, j)] += xa * y[(i, j)];
            }
        }
    }
    let cond = condition_number(&xtwx);
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::RankDeficient { condition: cond });
    }
    match xtwx.cholesky() {
        Some(ch) => Ok(ch.solve(&xtwy)),
        None => Err(Error::RankDeficient { condition: cond }),
    }
}

/// Column-stacking vectorisation.
pub fn vec_columns(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Correlation matrix from a covariance matrix. Zero-variance coordinates
/// get a unit diagonal and zero off-diagonals.
pub fn correlation_from_covariance(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let p = cov.nrows();
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            return 1.0;
        }
        let d = (cov[(i, i)] * cov[(j, j)]).sqrt();
        if d > 0.0 {
            cov[(i, j)] / d
        } else {
            0.0
        }
    })
}

/// Componentwise median of the rows of `y` (mean of the two middle values
/// for even counts).
pub fn column_medians(y: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        y.ncols(),
        y.column_iter().map(|col| {
            let mut v: Vec<f64> = col.iter().copied().collect();
            v.sort_by(|a, b| a.total_cmp(b));
            let n = v.len();
            if n == 0 {
                f64::NAN
            } else if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        }),
    )
}

pub fn column_means(y: &DMatrix<f64>) -> DVector<f64> {
    let n = y.nrows() as f64;
    DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.sum() / n))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ols_recovers_exact_line() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let (b, _) = ols(&x, &y).unwrap();
        assert_relative_eq!(b[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(b[(1, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(b[(1, 1)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_rejects_collinear_design() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(ols(&x, &y), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn medians_even_and_odd() {
        let y = DMatrix::from_row_slice(4, 1, &[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(column_medians(&y)[0], 2.5);
        let y = DMatrix::from_row_slice(3, 1, &[4.0, 1.0, 3.0]);
        assert_eq!(column_medians(&y)[0], 3.0);
    }

    #[test]
    fn vec_stacks_columns() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec_columns(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
    }
}
