//! Multidimensional Huber score and the directional weighting function.
//!
//! The estimating-equation summand for one observation is
//! `eta(phi) * psi(y - theta)`, where `psi` is the multidimensional Huber
//! function with tuning constant `c` and `eta` re-weights the residual by the
//! angle `phi` it makes with the direction `u`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Residual norms at or below this floor are treated as exact zeros.
pub const DEFAULT_EPSILON_NORM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    c: f64,
    delta: f64,
    epsilon_norm: f64,
}

impl HuberParams {
    pub fn new(c: f64, delta: f64) -> Result<Self> {
        Self::with_epsilon(c, delta, DEFAULT_EPSILON_NORM)
    }

    pub fn with_epsilon(c: f64, delta: f64, epsilon_norm: f64) -> Result<Self> {
        if !(c >= 0.0) || c.is_nan() {
            return Err(Error::InvalidParameter(format!("tuning constant c = {c} must be >= 0")));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta = {delta} must be > 0")));
        }
        if !(epsilon_norm > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon_norm = {epsilon_norm} must be > 0")));
        }
        Ok(Self { c, delta, epsilon_norm })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon_norm(&self) -> f64 {
        self.epsilon_norm
    }
}

/// Which form of the obtuse-angle branch of `eta` to evaluate.
///
/// `Reduction` uses `-(1 + cos phi)^delta * zeta + 2(1 - tau)`, which gives
/// `eta = 1 - zeta * sgn(y - theta)` in one dimension. `Printed` keeps
/// `(1 - cos phi)^delta` in that branch as well and is only useful for
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EtaForm {
    #[default]
    Reduction,
    Printed,
}

/// Target of one unconditional M-quantile: level, direction and score
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MQuantileSpec {
    tau: f64,
    u: DVector<f64>,
    huber: HuberParams,
    eta_form: EtaForm,
}

impl MQuantileSpec {
    /// `u` may be any nonzero vector; it is stored normalised.
    pub fn new(tau: f64, u: &[f64], huber: HuberParams) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParameter(format!("tau = {tau} must lie in (0, 1)")));
        }
        if u.is_empty() {
            return Err(Error::InvalidParameter("direction is empty".into()));
        }
        let u = DVector::from_column_slice(u);
        let norm = u.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter("direction must be a finite nonzero vector".into()));
        }
        Ok(Self { tau, u: u / norm, huber, eta_form: EtaForm::Reduction })
    }

    pub fn with_eta_form(mut self, form: EtaForm) -> Self {
        self.eta_form = form;
        self
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn direction(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn huber(&self) -> &HuberParams {
        &self.huber
    }

    pub fn eta_form(&self) -> EtaForm {
        self.eta_form
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Same target with a different tuning constant.
    pub fn with_c(&self, c: f64) -> Result<Self> {
        let huber = HuberParams::with_epsilon(c, self.huber.delta, self.huber.epsilon_norm)?;
        Ok(Self { huber, ..self.clone() })
    }

    /// Same target in a different direction.
    pub fn with_direction(&self, u: &[f64]) -> Result<Self> {
        Ok(Self::new(self.tau, u, self.huber)?.with_eta_form(self.eta_form))
    }

    /// `(1 - tau, -u)`, which identifies the same M-quantile.
    pub fn reflected(&self) -> Self {
        Self { tau: 1.0 - self.tau, u: -&self.u, huber: self.huber, eta_form: self.eta_form }
    }

    /// Equivalent spec with `tau <= 1/2`.
    pub fn resolved(&self) -> Self {
        if self.tau > 0.5 {
            self.reflected()
        } else {
            self.clone()
        }
    }

    /// `zeta = 1 - 2 tau` of the resolved spec.
    pub fn zeta(&self) -> f64 {
        1.0 - 2.0 * self.tau.min(1.0 - self.tau)
    }

    /// Cosine of the angle between `r` and `u`; `None` for a zero residual.
    pub fn cos_phi(&self, r: &[f64]) -> Option<f64> {
        let norm = norm(r);
        if norm <= self.huber.epsilon_norm {
            return None;
        }
        let dot: f64 = r.iter().zip(self.u.iter()).map(|(a, b)| a * b).sum();
        Some((dot / norm).clamp(-1.0, 1.0))
    }

    pub(crate) fn kernel(&self) -> Kernel {
        let r = self.resolved();
        Kernel {
            tau: r.tau,
            u: r.u.as_slice().to_vec(),
            c: r.huber.c,
            delta: r.huber.delta,
            eps: r.huber.epsilon_norm,
            form: r.eta_form,
        }
    }
}

/// Flattened, already-resolved view of a spec used in the hot loops.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    pub tau: f64,
    pub u: Vec<f64>,
    pub c: f64,
    pub delta: f64,
    pub eps: f64,
    pub form: EtaForm,
}

/// Per-residual quantities: the score is `eta * scale * r`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Eval {
    pub eta: f64,
    /// `1/c` inside the quadratic zone, `1/|r|` outside, 0 at a zero residual.
    pub scale: f64,
}

impl Eval {
    pub fn is_zero(&self) -> bool {
        self.scale == 0.0
    }

    /// IRLS weight.
    pub fn weight(&self) -> f64 {
        self.eta * self.scale
    }
}

impl Kernel {
    pub fn eval(&self, r: &[f64]) -> Eval {
        let norm = norm(r);
        if norm <= self.eps {
            return Eval { eta: 1.0, scale: 0.0 };
        }
        let dot: f64 = r.iter().zip(&self.u).map(|(a, b)| a * b).sum();
        let cos = (dot / norm).clamp(-1.0, 1.0);
        let eta = eta_unchecked(cos, self.tau, self.delta, self.form);
        let scale = if norm < self.c { 1.0 / self.c } else { 1.0 / norm };
        Eval { eta, scale }
    }

    /// `eta * psi(r)` written into `out`.
    pub fn score_into(&self, r: &[f64], out: &mut [f64]) -> Eval {
        let e = self.eval(r);
        let w = e.weight();
        for (o, ri) in out.iter_mut().zip(r) {
            *o = w * ri;
        }
        e
    }

    /// `eta` at the angle of a direction `v` (used for zero-residual slack).
    pub fn eta_towards(&self, v: &[f64]) -> f64 {
        let norm = norm(v);
        if norm == 0.0 {
            return 2.0 * self.tau;
        }
        let dot: f64 = v.iter().zip(&self.u).map(|(a, b)| a * b).sum();
        eta_unchecked((dot / norm).clamp(-1.0, 1.0), self.tau, self.delta, self.form)
    }
}

pub(crate) fn norm(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Multidimensional Huber function: `r/c` inside the ball of radius `c`,
/// `r/|r|` outside it, zero at the origin.
pub fn psi(r: &[f64], params: &HuberParams) -> DVector<f64> {
    let n = norm(r);
    let v = DVector::from_column_slice(r);
    if n <= params.epsilon_norm {
        DVector::zeros(r.len())
    } else if n < params.c {
        v / params.c
    } else {
        v / n
    }
}

fn eta_unchecked(cos_phi: f64, tau: f64, delta: f64, form: EtaForm) -> f64 {
    let zeta = 1.0 - 2.0 * tau;
    if cos_phi > 0.0 {
        (1.0 - cos_phi).powf(delta) * zeta + 2.0 * tau
    } else {
        let base = match form {
            EtaForm::Reduction => 1.0 + cos_phi,
            EtaForm::Printed => 1.0 - cos_phi,
        };
        -base.powf(delta) * zeta + 2.0 * (1.0 - tau)
    }
}

/// Directional weight `eta_delta(phi)` as a function of `cos phi`.
pub fn eta_weight(cos_phi: f64, tau: f64, delta: f64) -> Result<f64> {
    eta_weight_with(cos_phi, tau, delta, EtaForm::Reduction)
}

pub fn eta_weight_with(cos_phi: f64, tau: f64, delta: f64, form: EtaForm) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau = {tau} must lie in (0, 1)")));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta} must be > 0")));
    }
    Ok(eta_unchecked(cos_phi.clamp(-1.0, 1.0), tau, delta, form))
}

/// Estimating-equation summand `eta(phi) * psi(y - theta)`.
pub fn score(y: &[f64], theta: &[f64], spec: &MQuantileSpec) -> DVector<f64> {
    let r = residual(y, theta);
    let mut out = vec![0.0; r.len()];
    spec.kernel().score_into(&r, &mut out);
    DVector::from_vec(out)
}

fn residual(y: &[f64], theta: &[f64]) -> Vec<f64> {
    y.iter().zip(theta).map(|(a, b)| a - b).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMethod {
    /// Closed form, only available when `eta` is constant (`tau = 1/2`).
    AnalyticLimit,
    #[default]
    CentralDiff,
}

/// Default central-difference step for a point `theta`.
pub fn default_step(theta: &[f64]) -> f64 {
    f64::EPSILON.cbrt() * norm(theta).max(1.0)
}

/// Derivative of `score(y, theta)` with respect to `theta` (`p x p`,
/// row = score component, column = coordinate of `theta`).
pub fn score_jacobian(y: &[f64], theta: &[f64], spec: &MQuantileSpec, method: JacobianMethod) -> Result<DMatrix<f64>> {
    let r = residual(y, theta);
    let rn = norm(&r);
    if rn <= spec.huber.epsilon_norm {
        return Err(Error::SingularResidual { norm: rn });
    }
    match method {
        JacobianMethod::CentralDiff => Ok(central_jacobian(&spec.kernel(), &r, default_step(theta))),
        JacobianMethod::AnalyticLimit => {
            if spec.zeta() != 0.0 {
                return Err(Error::InvalidParameter("analytic Jacobian needs a constant eta (tau = 1/2)".into()));
            }
            let p = r.len();
            let c = spec.huber.c;
            if rn < c {
                return Ok(DMatrix::identity(p, p) * (-1.0 / c));
            }
            let rv = DVector::from_column_slice(&r);
            let proj = DMatrix::identity(p, p) - &rv * rv.transpose() / (rn * rn);
            Ok(proj * (-1.0 / rn))
        }
    }
}

/// Central-difference Jacobian with an explicit step.
pub fn score_jacobian_with_step(y: &[f64], theta: &[f64], spec: &MQuantileSpec, h: f64) -> Result<DMatrix<f64>> {
    let r = residual(y, theta);
    let rn = norm(&r);
    if rn <= spec.huber.epsilon_norm {
        return Err(Error::SingularResidual { norm: rn });
    }
    Ok(central_jacobian(&spec.kernel(), &r, h))
}

/// d score / d theta by central differences on the residual `r = y - theta`.
pub(crate) fn central_jacobian(kernel: &Kernel, r: &[f64], h: f64) -> DMatrix<f64> {
    let p = r.len();
    let mut jac = DMatrix::zeros(p, p);
    let mut rp = r.to_vec();
    let mut plus = vec![0.0; p];
    let mut minus = vec![0.0; p];
    for j in 0..p {
        // theta + h e_j shifts the residual by -h e_j
        rp[j] = r[j] - h;
        kernel.score_into(&rp, &mut plus);
        rp[j] = r[j] + h;
        kernel.score_into(&rp, &mut minus);
        rp[j] = r[j];
        for i in 0..p {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(c: f64) -> HuberParams {
        HuberParams::new(c, 1.0).unwrap()
    }

    fn spec(tau: f64, u: &[f64], c: f64) -> MQuantileSpec {
        MQuantileSpec::new(tau, u, params(c)).unwrap()
    }

    #[test]
    fn psi_branches() {
        assert_eq!(psi(&[1.0, 0.0], &params(2.0)).as_slice(), &[0.5, 0.0]);
        let v = psi(&[3.0, 4.0], &params(2.0));
        assert_relative_eq!(v[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.8, epsilon = 1e-15);
        assert_eq!(psi(&[0.0, 0.0], &params(2.0)).as_slice(), &[0.0, 0.0]);
        assert_eq!(psi(&[0.0, 0.0], &params(0.0)).as_slice(), &[0.0, 0.0]);
        let v = psi(&[1e-3, 0.0], &params(0.0));
        assert_eq!(v.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn eta_values() {
        assert_relative_eq!(eta_weight(1.0, 0.25, 1.0).unwrap(), 0.5);
        assert_relative_eq!(eta_weight(0.0, 0.25, 1.0).unwrap(), 1.0);
        assert_relative_eq!(eta_weight(-1.0, 0.25, 1.0).unwrap(), 1.5);
        for cos in [-1.0, -0.3, 0.0, 0.4, 1.0] {
            assert_relative_eq!(eta_weight(cos, 0.5, 1.0).unwrap(), 1.0);
        }
        assert!(eta_weight(0.2, 0.0, 1.0).is_err());
        assert!(eta_weight(0.2, 1.0, 1.0).is_err());
    }

    #[test]
    fn printed_form_is_symmetric_in_sign() {
        let a = eta_weight_with(1.0, 0.25, 1.0, EtaForm::Printed).unwrap();
        let b = eta_weight_with(-1.0, 0.25, 1.0, EtaForm::Printed).unwrap();
        assert_relative_eq!(a, 0.5);
        assert_relative_eq!(b, 0.5);
    }

    #[test]
    fn eta_is_continuous_at_right_angle() {
        for tau in [0.05, 0.2, 0.45] {
            for delta in [0.5, 1.0, 2.0] {
                let left = eta_weight(-1e-12, tau, delta).unwrap();
                let right = eta_weight(1e-12, tau, delta).unwrap();
                assert!((left - right).abs() < 1e-9, "tau {tau} delta {delta}");
            }
        }
    }

    #[test]
    fn score_univariate_reduction() {
        let s = spec(0.25, &[1.0], 0.0);
        assert_relative_eq!(score(&[5.0], &[0.0], &s)[0], 0.5);
        assert_relative_eq!(score(&[-5.0], &[0.0], &s)[0], -1.5);
        assert_eq!(score(&[2.0], &[2.0], &s)[0], 0.0);
    }

    #[test]
    fn spec_normalises_and_reflects() {
        let s = spec(0.9, &[2.0, 0.0], 1.0);
        assert_relative_eq!(s.direction()[0], 1.0);
        let r = s.reflected();
        assert_relative_eq!(r.tau(), 0.1, epsilon = 1e-15);
        assert_eq!(r.direction().as_slice(), &[-1.0, 0.0]);
        assert_eq!(r.reflected(), s);
        assert!(MQuantileSpec::new(0.3, &[0.0, 0.0], params(1.0)).is_err());
        assert!(MQuantileSpec::new(1.0, &[1.0], params(1.0)).is_err());
        assert!(HuberParams::new(-1.0, 1.0).is_err());
        assert!(HuberParams::new(1.0, 0.0).is_err());
    }

    #[test]
    fn analytic_jacobian_examples() {
        let s = spec(0.5, &[1.0, 0.0], 0.0);
        let j = score_jacobian(&[1.0, 0.0], &[0.0, 0.0], &s, JacobianMethod::AnalyticLimit).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -1.0]));

        let s = spec(0.5, &[1.0, 0.0], 1e6);
        let j = score_jacobian(&[3.0, -2.0], &[0.5, 0.5], &s, JacobianMethod::AnalyticLimit).unwrap();
        assert_eq!(j, DMatrix::identity(2, 2) * -1e-6);

        let s = spec(0.25, &[1.0, 0.0], 1.0);
        assert!(score_jacobian(&[1.0, 0.0], &[0.0, 0.0], &s, JacobianMethod::AnalyticLimit).is_err());
    }

    #[test]
    fn jacobian_rejects_zero_residual() {
        let s = spec(0.25, &[1.0, 0.0], 1.0);
        let err = score_jacobian(&[1.0, 1.0], &[1.0, 1.0], &s, JacobianMethod::CentralDiff);
        assert!(matches!(err, Err(Error::SingularResidual { .. })));
    }

    #[test]
    fn central_diff_is_step_consistent() {
        // Richardson-style self-consistency: shrinking the step tenfold
        // must not move the estimate.
        let s = spec(0.25, &[0.6, 0.8], 1.0);
        let y = [2.0, 1.0];
        let theta = [0.0, 0.0];
        let h = default_step(&theta);
        let coarse = score_jacobian_with_step(&y, &theta, &s, h).unwrap();
        let fine = score_jacobian_with_step(&y, &theta, &s, h / 10.0).unwrap();
        let default = score_jacobian(&y, &theta, &s, JacobianMethod::CentralDiff).unwrap();
        assert_eq!(coarse, default);
        for (a, b) in coarse.iter().zip(fine.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn psi_norm_bounded(r in prop::collection::vec(-10.0..10.0f64, 1..5), c in 0.0..5.0f64) {
            let v = psi(&r, &params(c));
            let rn = norm(&r);
            prop_assert!(v.norm() <= 1.0 + 1e-12);
            if c > 0.0 && rn >= c {
                prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn psi_continuous_on_sphere(dir in prop::collection::vec(-1.0..1.0f64, 2..4), c in 0.1..5.0f64) {
            let dn = norm(&dir);
            prop_assume!(dn > 1e-3);
            let r: Vec<f64> = dir.iter().map(|d| d / dn * c).collect();
            let on = psi(&r, &params(c));
            let inside: Vec<f64> = r.iter().map(|x| x * (1.0 - 1e-12)).collect();
            let v = psi(&inside, &params(c));
            prop_assert!((on - v).norm() < 1e-9);
        }

        #[test]
        fn eta_monotone_on_branches(a in -1.0..1.0f64, b in -1.0..1.0f64, tau in 0.01..0.5f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // decreasing in cos phi for tau < 1/2, delta = 1
            let e_lo = eta_weight(lo, tau, 1.0).unwrap();
            let e_hi = eta_weight(hi, tau, 1.0).unwrap();
            prop_assert!(e_hi <= e_lo + 1e-12);
            prop_assert!(e_lo <= 2.0 * (1.0 - tau) + 1e-12 && e_hi >= 2.0 * tau - 1e-12);
        }

        #[test]
        fn univariate_score_matches_sign_form(d in -10.0..10.0f64, tau in 0.01..0.5f64, c in 0.0..4.0f64) {
            prop_assume!(d.abs() > 1e-6);
            let s = spec(tau, &[1.0], c);
            let zeta = 1.0 - 2.0 * tau;
            let expect = (1.0 - zeta * d.signum()) * psi(&[d], &params(c))[0];
            prop_assert!((score(&[d], &[0.0], &s)[0] - expect).abs() < 1e-14);
        }

        #[test]
        fn central_diff_matches_analytic(angle in 0.0..std::f64::consts::TAU, len in 0.5..5.0f64) {
            let s = spec(0.5, &[1.0, 0.0], 0.0);
            let y = [len * angle.cos(), len * angle.sin()];
            let a = score_jacobian(&y, &[0.0, 0.0], &s, JacobianMethod::AnalyticLimit).unwrap();
            let n = score_jacobian(&y, &[0.0, 0.0], &s, JacobianMethod::CentralDiff).unwrap();
            for (x, z) in a.iter().zip(n.iter()) {
                prop_assert!((x - z).abs() < 1e-5);
            }
        }
    }
}
