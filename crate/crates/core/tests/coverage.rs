use mqrif::oracle::{run_coverage, DgpConfig, DgpKind};
use mqrif::{HuberParams, MQuantileSpec};

#[test]
fn coverage_does_not_drift_away_as_n_grows() {
    let spec = MQuantileSpec::new(0.5, &[1.0, 1.0], HuberParams::new(1e6, 1.0).unwrap()).unwrap();
    let small = run_coverage(&DgpConfig::new(DgpKind::GaussianLinear, 2000, 21), &spec, 500, 0.95).unwrap();
    let large = run_coverage(&DgpConfig::new(DgpKind::GaussianLinear, 8000, 22), &spec, 200, 0.95).unwrap();
    assert!((0.92..=0.975).contains(&small.coverage), "{small:?}");
    assert!((large.coverage - 0.95).abs() <= (small.coverage - 0.95).abs() + 0.02, "{small:?} {large:?}");
}
