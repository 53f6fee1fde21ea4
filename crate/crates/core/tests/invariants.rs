use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mqrif::contour::{contour, point_in_polygon};
use mqrif::io::{read_csv, write_matrix_csv, DatasetSchema};
use mqrif::oracle::{
    convex_hull, reference_equation, simulate, univariate_expectile_oracle, univariate_quantile_oracle, DgpConfig,
    DgpKind,
};
use mqrif::regression::{bootstrap_ci, RifModel};
use mqrif::rif::influence;
use mqrif::solver::fit_unconditional;
use mqrif::tuning::{c_grid, cross_validate};
use mqrif::{HuberParams, IrlsOptions, MQuantileSpec};

fn spec(tau: f64, u: &[f64], c: f64) -> MQuantileSpec {
    MQuantileSpec::new(tau, u, HuberParams::new(c, 1.0).unwrap()).unwrap()
}

fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_solves_the_reference_equation(seed in 0u64..10_000, tau in 0.05..0.95f64,
                                          angle in 0.0..std::f64::consts::TAU, c in 0.2..5.0f64) {
        let y = gaussian(120, 2, seed);
        let s = spec(tau, &[angle.cos(), angle.sin()], c);
        let fit = fit_unconditional(&y, &s, &IrlsOptions::default()).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(reference_equation(&y, fit.theta.as_slice(), &s).norm() < 1e-8);
    }

    #[test]
    fn influence_values_average_to_zero(seed in 0u64..10_000, tau in 0.05..0.5f64, c in 0.5..5.0f64) {
        let y = gaussian(150, 3, seed);
        let fit = fit_unconditional(&y, &spec(tau, &[1.0, -1.0, 0.5], c), &IrlsOptions::default()).unwrap();
        let sample = influence(&y, &fit).unwrap();
        let mean_if = sample.if_values.row_mean();
        prop_assert!(mean_if.amax() < 1e-7, "{}", mean_if);
        let mean_rif = sample.rif_values.row_mean().transpose();
        prop_assert!((mean_rif - &fit.theta).amax() < 1e-7);
    }

    #[test]
    fn univariate_fits_match_order_statistics_and_expectiles(seed in 0u64..10_000, n in 5usize..60,
                                                             tau in 0.02..0.98f64) {
        let y = gaussian(n, 1, seed);
        let values: Vec<f64> = y.iter().copied().collect();
        let q = fit_unconditional(&y, &spec(tau, &[1.0], 0.0), &IrlsOptions::default()).unwrap();
        prop_assert_eq!(q.theta[0], univariate_quantile_oracle(&values, tau));
        let e = fit_unconditional(&y, &spec(tau, &[1.0], 1e6), &IrlsOptions::default()).unwrap();
        prop_assert!((e.theta[0] - univariate_expectile_oracle(&values, tau)).abs() < 1e-8);
    }

    #[test]
    fn matrix_csv_round_trips_exactly(seed in 0u64..10_000, scale in -300i32..300) {
        let m = gaussian(7, 2, seed) * 10f64.powi(scale / 10);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &["a".into(), "b".into()], &m).unwrap();
        let ds = read_csv(buf.as_slice(), &DatasetSchema::new(&["a", "b"], &[])).unwrap();
        prop_assert_eq!(ds.y, m);
    }
}

#[test]
fn quantile_contour_lies_inside_the_data_hull() {
    let y = gaussian(400, 2, 1);
    let set = contour(&y, 0.05, HuberParams::new(0.0, 1.0).unwrap(), 48, 0, &IrlsOptions::default()).unwrap();
    let hull = convex_hull(&y);
    for i in 0..set.vertices.nrows() {
        assert!(point_in_polygon([set.vertices[(i, 0)], set.vertices[(i, 1)]], &hull));
    }
}

#[test]
fn seeded_procedures_are_deterministic() {
    let data = simulate(&DgpConfig::new(DgpKind::Contaminated, 150, 9)).unwrap();
    assert_eq!(data, simulate(&DgpConfig::new(DgpKind::Contaminated, 150, 9)).unwrap());

    let s = spec(0.3, &[0.6, 0.8], 1.0);
    let grid = c_grid(&data.y, 12).unwrap();
    let opts = IrlsOptions::default();
    let a = cross_validate(&data.y, &s, 4, &grid, 3, &opts).unwrap();
    assert_eq!(a, cross_validate(&data.y, &s, 4, &grid, 3, &opts).unwrap());
    assert!(grid.contains(&a.c_star));

    let b1 = bootstrap_ci(&data.y, &data.x, &s, &RifModel::Linear, 100, 0.9, 4, &opts).unwrap();
    let b2 = bootstrap_ci(&data.y, &data.x, &s, &RifModel::Linear, 100, 0.9, 4, &opts).unwrap();
    assert_eq!(b1, b2);
    assert!(b1.ci_lower.iter().zip(b1.ci_upper.iter()).all(|(l, u)| l <= u));
}
