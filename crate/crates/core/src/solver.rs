//! IRLS solvers for the unconditional estimating equation and for the linear
//! conditional M-quantile regression.
//!
//! Both use the combined weight `w_i = eta_i / c` inside the quadratic zone
//! and `eta_i / |r_i|` outside it, so that the estimating equation
//! `sum_i w_i r_i = 0` becomes a weighted mean (or weighted least squares)
//! fixed point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::huber::{Kernel, MQuantileSpec};
use crate::linalg;

/// Maximum number of step halvings when the equation norm goes up.
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, Default)]
pub enum IrlsInit {
    #[default]
    Median,
    Mean,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Bound on both the sup-norm of the last step and the equation norm.
    pub tol: f64,
    pub init: IrlsInit,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-8, init: IrlsInit::Median }
    }
}

impl IrlsOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MQuantileFit {
    pub spec: MQuantileSpec,
    pub theta: DVector<f64>,
    pub iterations: usize,
    /// Norm of the sample mean of the scores at `theta`. With `c = 0`,
    /// observations sitting exactly on `theta` absorb part of it through the
    /// subdifferential of the score at zero.
    pub eq_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFit {
    pub spec: MQuantileSpec,
    /// `k x p` coefficients; the conditional M-quantile at `x` is `beta' x`.
    pub beta: DMatrix<f64>,
    pub iterations: usize,
    pub eq_norm: f64,
    pub converged: bool,
}

/// `(1 - tau, -u)`; the M-quantile it identifies is the same.
pub fn reflect_spec(spec: &MQuantileSpec) -> MQuantileSpec {
    spec.reflected()
}

/// Row-major copy of `y`, so each observation is a contiguous slice.
pub(crate) fn row_major(y: &DMatrix<f64>) -> Vec<f64> {
    y.transpose().as_slice().to_vec()
}

/// Sample mean of the scores at `theta`.
pub fn estimating_equation(y: &DMatrix<f64>, theta: &[f64], spec: &MQuantileSpec) -> DVector<f64> {
    let p = y.ncols();
    let rows = row_major(y);
    let kernel = spec.kernel();
    let mut r = vec![0.0; p];
    let mut s = vec![0.0; p];
    let mut acc = vec![0.0; p];
    for yi in rows.chunks_exact(p) {
        for j in 0..p {
            r[j] = yi[j] - theta[j];
        }
        kernel.score_into(&r, &mut s);
        for j in 0..p {
            acc[j] += s[j];
        }
    }
    let n = y.nrows() as f64;
    DVector::from_iterator(p, acc.into_iter().map(|a| a / n))
}

#[derive(Debug, Clone)]
struct State {
    /// Weighted mean of the observations (the plain IRLS target).
    target: Vec<f64>,
    eq_norm: f64,
    /// Row carrying the largest weight and its share of the total.
    heaviest: usize,
    heaviest_share: f64,
}

fn evaluate(rows: &[f64], p: usize, theta: &[f64], kernel: &Kernel) -> State {
    let n = rows.len() / p;
    let mut r = vec![0.0; p];
    let mut g = vec![0.0; p];
    let mut num = vec![0.0; p];
    let mut den = 0.0;
    let mut zeros = 0usize;
    let mut heaviest = 0;
    let mut w_max = -1.0;
    for (i, yi) in rows.chunks_exact(p).enumerate() {
        for j in 0..p {
            r[j] = yi[j] - theta[j];
        }
        let e = kernel.eval(&r);
        let w = if e.is_zero() {
            zeros += 1;
            if kernel.c > 0.0 {
                1.0 / kernel.c.max(kernel.eps)
            } else {
                0.0
            }
        } else {
            e.weight()
        };
        if w > w_max {
            w_max = w;
            heaviest = i;
        }
        den += w;
        for j in 0..p {
            num[j] += w * yi[j];
            if !e.is_zero() {
                g[j] += e.weight() * r[j];
            }
        }
    }
    let nf = n as f64;
    for gj in g.iter_mut() {
        *gj /= nf;
    }
    let mut eq_norm = crate::huber::norm(&g);
    if kernel.c == 0.0 && zeros > 0 {
        // rows on theta contribute eta(v) v for any |v| <= 1
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let slack = zeros as f64 * kernel.eta_towards(&neg) / nf;
        eq_norm = (eq_norm - slack).max(0.0);
    }
    let target = if den > 0.0 { num.iter().map(|v| v / den).collect() } else { theta.to_vec() };
    State { target, eq_norm, heaviest, heaviest_share: if den > 0.0 { w_max / den } else { 0.0 } }
}

fn check_data(y: &DMatrix<f64>, p: usize) -> Result<()> {
    if y.ncols() != p {
        return Err(Error::Dimension(format!("response has {} columns, direction has {}", y.ncols(), p)));
    }
    if y.nrows() < p + 1 {
        return Err(Error::InvalidParameter(format!("need at least {} observations, got {}", p + 1, y.nrows())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("response contains non-finite values".into()));
    }
    Ok(())
}

fn all_rows_identical(y: &DMatrix<f64>) -> bool {
    let first = y.row(0);
    y.row_iter().all(|r| r == first)
}

/// Replaces a converged c = 0 root by an observation lying within rounding
/// distance of it, when that observation solves the equation as well.
fn snap_to_nearest_row(rows: &[f64], p: usize, theta: &mut Vec<f64>, state: &mut State, kernel: &Kernel, tol: f64) {
    let scale = theta.iter().fold(1.0_f64, |m, t| m.max(t.abs()));
    let nearest = rows
        .chunks_exact(p)
        .map(|r| (r, r.iter().zip(theta.iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((row, dist)) = nearest {
        if dist > 0.0 && dist <= 1e3 * tol * scale {
            let at = evaluate(rows, p, row, kernel);
            if at.eq_norm <= tol {
                *theta = row.to_vec();
                *state = at;
            }
        }
    }
}

/// Observations closest to `theta` tried as c = 0 roots when IRLS stalls.
const VERTEX_CANDIDATES: usize = 8;

/// Nearest observation to `theta`, among the few closest, that solves the
/// c = 0 equation within `tol`. A piecewise-constant equation (p = 1) leaves
/// IRLS nothing to descend on, so the root has to be found among the rows.
fn nearest_root_row(rows: &[f64], p: usize, theta: &[f64], kernel: &Kernel, tol: f64) -> Option<(Vec<f64>, State)> {
    let try_row = |row: &[f64]| {
        let at = evaluate(rows, p, row, kernel);
        (at.eq_norm <= tol).then(|| (row.to_vec(), at))
    };
    if p == 1 {
        // the equation is constant between observations, so the root is one
        // of the two observations bracketing theta
        let below = rows.iter().copied().filter(|v| *v <= theta[0]).fold(f64::NEG_INFINITY, f64::max);
        let above = rows.iter().copied().filter(|v| *v >= theta[0]).fold(f64::INFINITY, f64::min);
        return [below, above].into_iter().filter(|v| v.is_finite()).find_map(|v| try_row(&[v]));
    }
    let mut by_distance: Vec<(f64, usize)> = rows
        .chunks_exact(p)
        .enumerate()
        .map(|(i, r)| (r.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let k = VERTEX_CANDIDATES.min(by_distance.len());
    by_distance.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    by_distance.truncate(k);
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    by_distance.into_iter().find_map(|(_, i)| try_row(&rows[i * p..(i + 1) * p]))
}

/// Solve the sample estimating equation for `theta` by IRLS.
///
/// Requests with `tau > 1/2` are solved at `(1 - tau, -u)`.
pub fn fit_unconditional(y: &DMatrix<f64>, spec: &MQuantileSpec, opts: &IrlsOptions) -> Result<MQuantileFit> {
    opts.validate()?;
    let p = spec.dim();
    check_data(y, p)?;
    if all_rows_identical(y) {
        return Err(Error::DegenerateData("all observations are identical".into()));
    }
    let kernel = spec.kernel();
    let rows = row_major(y);
    let mut theta: Vec<f64> = match &opts.init {
        IrlsInit::Median => linalg::column_medians(y).as_slice().to_vec(),
        IrlsInit::Mean => linalg::column_means(y).as_slice().to_vec(),
        IrlsInit::Given(v) => {
            if v.len() != p {
                return Err(Error::Dimension("initial value has the wrong length".into()));
            }
            v.clone()
        }
    };
    let mut state = evaluate(&rows, p, &theta, &kernel);
    let mut best = (theta.clone(), state.eq_norm);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        let full: Vec<f64> = state.target.iter().zip(&theta).map(|(t, th)| t - th).collect();
        let mut step = full.clone();
        let mut cand: Vec<f64> = theta.iter().zip(&step).map(|(a, b)| a + b).collect();
        let mut next = evaluate(&rows, p, &cand, &kernel);
        let mut halvings = 0;
        while next.eq_norm > state.eq_norm && halvings < MAX_HALVINGS {
            step.iter_mut().for_each(|s| *s *= 0.5);
            cand = theta.iter().zip(&step).map(|(a, b)| a + b).collect();
            next = evaluate(&rows, p, &cand, &kernel);
            halvings += 1;
        }
        if kernel.c == 0.0 && next.eq_norm >= state.eq_norm {
            if let Some((row, at)) = nearest_root_row(&rows, p, &theta, &kernel, opts.tol) {
                theta = row;
                state = at;
                best = (theta.clone(), state.eq_norm);
                converged = true;
                break;
            }
        }
        if next.eq_norm > state.eq_norm {
            step = full;
            cand = theta.iter().zip(&step).map(|(a, b)| a + b).collect();
            next = evaluate(&rows, p, &cand, &kernel);
        }
        theta = cand;
        state = next;

        // With c = 0 the root is often an observation itself: test the row
        // that dominates the weights directly.
        if kernel.c == 0.0 && state.heaviest_share > 0.25 {
            let vertex = rows[state.heaviest * p..(state.heaviest + 1) * p].to_vec();
            let at_vertex = evaluate(&rows, p, &vertex, &kernel);
            if at_vertex.eq_norm <= opts.tol {
                theta = vertex;
                state = at_vertex;
                converged = true;
            }
        }

        if state.eq_norm < best.1 {
            best = (theta.clone(), state.eq_norm);
        }
        if converged {
            break;
        }
        let step_inf = step.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if step_inf <= opts.tol && state.eq_norm <= opts.tol {
            converged = true;
            // one polishing step, kept only if it does not hurt
            let polished: Vec<f64> = state.target.clone();
            let at = evaluate(&rows, p, &polished, &kernel);
            if at.eq_norm <= state.eq_norm {
                theta = polished;
                state = at;
            }
            if kernel.c == 0.0 {
                snap_to_nearest_row(&rows, p, &mut theta, &mut state, &kernel, opts.tol);
            }
            break;
        }
    }

    let (theta, eq_norm) = if converged {
        (theta, state.eq_norm)
    } else {
        log::debug!("IRLS stopped after {iterations} iterations, eq norm {:e}", best.1);
        best
    };
    Ok(MQuantileFit { spec: spec.clone(), theta: DVector::from_vec(theta), iterations, eq_norm, converged })
}

struct CondState {
    weights: Vec<f64>,
    eq_norm: f64,
    all_zero: bool,
}

fn evaluate_conditional(y: &DMatrix<f64>, x: &DMatrix<f64>, beta: &DMatrix<f64>, kernel: &Kernel) -> CondState {
    let (n, p) = (y.nrows(), y.ncols());
    let k = x.ncols();
    let fitted = x * beta;
    let mut r = vec![0.0; p];
    let mut weights = vec![0.0; n];
    let mut g = DMatrix::<f64>::zeros(k, p);
    let mut all_zero = true;
    for i in 0..n {
        for j in 0..p {
            r[j] = y[(i, j)] - fitted[(i, j)];
        }
        let e = kernel.eval(&r);
        if e.is_zero() {
            weights[i] = if kernel.c > 0.0 { 1.0 / kernel.c.max(kernel.eps) } else { 0.0 };
            continue;
        }
        all_zero = false;
        let w = e.weight();
        weights[i] = w;
        for a in 0..k {
            for j in 0..p {
                g[(a, j)] += x[(i, a)] * w * r[j];
            }
        }
    }
    CondState { weights, eq_norm: g.norm() / n as f64, all_zero }
}

/// Linear conditional M-quantile regression: `theta(x) = beta' x`.
///
/// Starts from the least-squares fit and iterates weighted least squares.
/// `opts.init` is not used.
pub fn fit_conditional_linear(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    spec: &MQuantileSpec,
    opts: &IrlsOptions,
) -> Result<ConditionalFit> {
    opts.validate()?;
    let p = spec.dim();
    check_data(y, p)?;
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!("design has {} rows, response has {}", x.nrows(), y.nrows())));
    }
    let kernel = spec.kernel();
    let (mut beta, _) = linalg::ols(x, y)?;
    let mut state = evaluate_conditional(y, x, &beta, &kernel);
    let mut converged = state.all_zero;
    let mut iterations = 0;
    let mut best = (beta.clone(), state.eq_norm);

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        if state.weights.iter().all(|w| *w == 0.0) {
            break;
        }
        let target = linalg::weighted_ols(x, y, &state.weights)?;
        let full = &target - &beta;
        let mut step = full.clone();
        let mut next = evaluate_conditional(y, x, &(&beta + &step), &kernel);
        let mut halvings = 0;
        while next.eq_norm > state.eq_norm && halvings < MAX_HALVINGS {
            step *= 0.5;
            next = evaluate_conditional(y, x, &(&beta + &step), &kernel);
            halvings += 1;
        }
        if next.eq_norm > state.eq_norm {
            step = full;
            next = evaluate_conditional(y, x, &(&beta + &step), &kernel);
        }
        beta += &step;
        state = next;
        if state.eq_norm < best.1 {
            best = (beta.clone(), state.eq_norm);
        }
        let step_inf = step.amax();
        if state.all_zero || (step_inf <= opts.tol && state.eq_norm <= opts.tol) {
            converged = true;
        }
    }
    let (beta, eq_norm) = if converged { (beta, state.eq_norm) } else { best };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence("conditional fit produced non-finite coefficients".into()));
    }
    Ok(ConditionalFit { spec: spec.clone(), beta, iterations, eq_norm, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::huber::HuberParams;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn spec(tau: f64, u: &[f64], c: f64) -> MQuantileSpec {
        MQuantileSpec::new(tau, u, HuberParams::new(c, 1.0).unwrap()).unwrap()
    }

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn mean_at_half_with_large_c() {
        let y = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let fit = fit_unconditional(&y, &spec(0.5, &[1.0, 0.0], 1e6), &IrlsOptions::default()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.theta[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.theta[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn univariate_quantile_at_c_zero() {
        let y = DMatrix::from_iterator(9, 1, (1..=9).map(f64::from));
        let fit = fit_unconditional(&y, &spec(0.25, &[1.0], 0.0), &IrlsOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert_eq!(fit.theta[0], 3.0);
    }

    #[test]
    fn univariate_expectile_two_points() {
        let y = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let fit = fit_unconditional(&y, &spec(0.25, &[1.0], 1e6), &IrlsOptions::default()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.theta[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let y = DMatrix::from_element(5, 2, 3.0);
        let s = spec(0.3, &[1.0, 0.0], 1.0);
        assert!(matches!(fit_unconditional(&y, &s, &IrlsOptions::default()), Err(Error::DegenerateData(_))));
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(fit_unconditional(&y, &s, &IrlsOptions::default()).is_err());
        let mut y = gaussian(10, 2, 1);
        y[(3, 1)] = f64::NAN;
        assert!(fit_unconditional(&y, &s, &IrlsOptions::default()).is_err());
        let bad = IrlsOptions { max_iter: 0, ..Default::default() };
        assert!(fit_unconditional(&gaussian(10, 2, 1), &s, &bad).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let y = gaussian(200, 2, 3);
        let opts = IrlsOptions { max_iter: 1, ..Default::default() };
        let fit = fit_unconditional(&y, &spec(0.1, &[1.0, 0.0], 0.5), &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn converged_fits_satisfy_the_equation() {
        let y = gaussian(300, 2, 11);
        for tau in [0.1, 0.25, 0.5] {
            for c in [0.0, 0.5, 2.0, 1e6] {
                let s = spec(tau, &[0.6, -0.8], c);
                let fit = fit_unconditional(&y, &s, &IrlsOptions::default()).unwrap();
                assert!(fit.converged, "tau {tau} c {c}: {fit:?}");
                assert!(fit.eq_norm <= 1e-7);
                assert!(fit.iterations <= 200);
            }
        }
    }

    #[test]
    fn fixed_point_is_a_root() {
        let y = gaussian(150, 2, 5);
        let s = spec(0.2, &[1.0, 1.0], 1.5);
        let fit = fit_unconditional(&y, &s, &IrlsOptions::default()).unwrap();
        let g = estimating_equation(&y, fit.theta.as_slice(), &s);
        assert!(g.norm() <= 1e-7);
    }

    #[test]
    fn reflection_agrees() {
        let y = gaussian(200, 2, 9);
        let s = spec(0.9, &[1.0, 0.0], 1.0);
        assert_eq!(reflect_spec(&s).tau(), 1.0 - 0.9);
        let a = fit_unconditional(&y, &s, &IrlsOptions::default()).unwrap();
        let b = fit_unconditional(&y, &reflect_spec(&s), &IrlsOptions::default()).unwrap();
        assert!((a.theta - b.theta).amax() <= 1e-7);

        let h = spec(0.5, &[1.0, 0.0], 1e6);
        let a = fit_unconditional(&y, &h, &IrlsOptions::default()).unwrap();
        let b = fit_unconditional(&y, &reflect_spec(&h), &IrlsOptions::default()).unwrap();
        assert!((a.theta - b.theta).amax() <= 1e-12);
    }

    #[test]
    fn conditional_interpolates_noiseless_data() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let fit = fit_conditional_linear(&y, &x, &spec(0.5, &[1.0, 0.0], 1e6), &IrlsOptions::default()).unwrap();
        assert!(fit.converged);
        let want = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 2.0]);
        assert!((fit.beta - want).amax() < 1e-10);
    }

    #[test]
    fn conditional_constant_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(20, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() });
        let y = DMatrix::from_fn(20, 2, |_, j| if j == 0 { 4.0 } else { -1.0 });
        for c in [0.0, 1.0] {
            let fit = fit_conditional_linear(&y, &x, &spec(0.2, &[1.0, 1.0], c), &IrlsOptions::default()).unwrap();
            assert!(fit.converged);
            assert!((fit.beta[(0, 0)] - 4.0).abs() < 1e-10);
            assert!((fit.beta[(0, 1)] + 1.0).abs() < 1e-10);
            assert!(fit.beta.row(1).amax() < 1e-10);
        }
    }

    #[test]
    fn conditional_rejects_rank_deficient_design() {
        let x = DMatrix::from_fn(10, 2, |_, _| 1.0);
        let y = gaussian(10, 2, 4);
        let s = spec(0.3, &[1.0, 0.0], 1.0);
        assert!(matches!(
            fit_conditional_linear(&y, &x, &s, &IrlsOptions::default()),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn conditional_gaussian_dgp_recovers_coefficients() {
        let n = 5000;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 1.5]);
        let noise = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x * &b + noise;
        let fit = fit_conditional_linear(&y, &x, &spec(0.5, &[1.0, 0.0], 1e6), &IrlsOptions::default()).unwrap();
        // OLS standard error of a slope with unit noise and unit-variance x
        let se = 1.0 / (n as f64).sqrt();
        for j in 0..2 {
            assert!((fit.beta[(1, j)] - b[(1, j)]).abs() < 3.0 * se, "{}", fit.beta);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn translation_equivariance(seed in 0u64..1000, a in -5.0..5.0f64, b in -5.0..5.0f64,
                                    tau in 0.05..0.5f64, c in prop::sample::select(vec![0.3, 1.0, 1e6])) {
            let y = gaussian(80, 2, seed);
            let shifted = DMatrix::from_fn(80, 2, |i, j| y[(i, j)] + if j == 0 { a } else { b });
            let s = spec(tau, &[1.0, 2.0], c);
            let f0 = fit_unconditional(&y, &s, &IrlsOptions::default()).unwrap();
            let f1 = fit_unconditional(&shifted, &s, &IrlsOptions::default()).unwrap();
            prop_assert!(f0.converged && f1.converged);
            prop_assert!((f1.theta[0] - f0.theta[0] - a).abs() < 1e-6);
            prop_assert!((f1.theta[1] - f0.theta[1] - b).abs() < 1e-6);
        }

        #[test]
        fn rotation_equivariance(seed in 0u64..1000, angle in 0.0..std::f64::consts::TAU,
                                 tau in 0.05..0.5f64, c in prop::sample::select(vec![0.5, 2.0, 1e6])) {
            let y = gaussian(80, 2, seed);
            let q = nalgebra::Matrix2::new(angle.cos(), -angle.sin(), angle.sin(), angle.cos());
            let q = DMatrix::from_column_slice(2, 2, q.as_slice());
            let yq = &y * q.transpose();
            let u = DVector::from_column_slice(&[0.3, 0.7]);
            let qu = &q * &u;
            let f0 = fit_unconditional(&y, &spec(tau, u.as_slice(), c), &IrlsOptions::default()).unwrap();
            let f1 = fit_unconditional(&yq, &spec(tau, qu.as_slice(), c), &IrlsOptions::default()).unwrap();
            prop_assert!(f0.converged && f1.converged);
            let rotated = &q * &f0.theta;
            prop_assert!((rotated - &f1.theta).amax() < 1e-6);
        }

        #[test]
        fn mean_when_c_covers_all_residuals(seed in 0u64..1000) {
            let y = gaussian(50, 3, seed);
            let mean = linalg::column_means(&y);
            let c = y.row_iter().map(|r| (r.transpose() - &mean).norm()).fold(0.0, f64::max);
            let fit = fit_unconditional(&y, &spec(0.5, &[1.0, 0.0, 0.0], c), &IrlsOptions::default()).unwrap();
            prop_assert!((fit.theta.clone() - &mean).amax() < 1e-10, "{:?} {} {}", fit, mean, (fit.theta.clone() - &mean).amax());
        }
    }
}
