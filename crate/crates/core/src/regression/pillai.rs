//! Pillai trace test of the linear RIF specification against splines.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::spline::{expand_design, SplineConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rif;
use crate::solver::MQuantileFit;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearityTest {
    /// Pillai's trace `tr(H (H + E)^-1)`.
    pub statistic: f64,
    pub p_value: f64,
    pub f_stat: f64,
    pub df1: f64,
    pub df2: f64,
    /// Basis columns beyond the linear design.
    pub extra_columns: usize,
}

fn residual_sscp(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (coef, _) = linalg::ols(x, y)?;
    let resid = y - x * coef;
    Ok(resid.tr_mul(&resid))
}

/// Test on precomputed RIF rows.
pub fn pillai_linearity(rif: &DMatrix<f64>, x: &DMatrix<f64>, cfg: &SplineConfig) -> Result<LinearityTest> {
    if rif.nrows() != x.nrows() {
        return Err(Error::Dimension("design and RIF differ in length".into()));
    }
    let (z, _) = expand_design(x, cfg)?;
    if z.ncols() < x.ncols() {
        return Err(Error::InvalidParameter("spline design does not nest the linear design".into()));
    }
    let q = z.ncols() - x.ncols();
    let p = rif.ncols();
    let n = rif.nrows();
    if q == 0 {
        return Ok(LinearityTest { statistic: 0.0, p_value: 1.0, f_stat: 0.0, df1: 0.0, df2: 0.0, extra_columns: 0 });
    }
    let nu_e = n as f64 - z.ncols() as f64;
    if nu_e <= p as f64 {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let e = residual_sscp(&z, rif)?;
    let total = residual_sscp(x, rif)?;
    let h = &total - &e;
    let inv = linalg::checked_inverse(&total).map_err(|condition| Error::RankDeficient { condition })?;
    let statistic = (&h * inv).trace().max(0.0);

    let s = p.min(q) as f64;
    let m = ((p as f64 - q as f64).abs() - 1.0) / 2.0;
    let big_n = (nu_e - p as f64 - 1.0) / 2.0;
    let df1 = s * (2.0 * m + s + 1.0);
    let df2 = s * (2.0 * big_n + s + 1.0);
    let f_stat = (2.0 * big_n + s + 1.0) / (2.0 * m + s + 1.0) * statistic / (s - statistic);
    let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let p_value = dist.sf(f_stat.max(0.0));
    Ok(LinearityTest { statistic, p_value, f_stat, df1, df2, extra_columns: q })
}

/// Compares the regression of the RIF on `x` with the regression on the
/// spline-expanded design.
pub fn linearity_test(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    fit: &MQuantileFit,
    cfg: &SplineConfig,
) -> Result<LinearityTest> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension("design and response differ in length".into()));
    }
    let sample = rif::influence(y, fit)?;
    pillai_linearity(&sample.rif_values, x, cfg)
}
