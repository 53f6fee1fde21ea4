use std::path::PathBuf;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use mqrif::contour::{contour, DEFAULT_DIRECTIONS};
use mqrif::io::{encode_design, load_csv, DatasetSchema};
use mqrif::oracle::{self, simulate, DgpConfig, DgpKind};
use mqrif::regression::{bootstrap_ci, linearity_test, umqpe_linear, umqpe_splines, RifModel, SplineConfig, UpeFit};
use mqrif::rif::rif_covariance;
use mqrif::solver::fit_unconditional;
use mqrif::tuning::{c_grid, cross_validate, CvResult};
use mqrif::{HuberParams, IrlsOptions, MQuantileFit, MQuantileSpec};

use crate::error::{CliError, CliResult};
use crate::options::{
    CValue, ContourArgs, DataArgs, Direction, EstimateArgs, ModelArgs, ReplicationArgs, SimulateArgs,
};
use crate::output::{contour_svg, tau_label, OutputDir};

const DEFAULT_OUT: &str = "mqrif-out";

fn fmt(v: f64) -> String {
    mqrif::io::format_number(v)
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

pub struct LoadedData {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub responses: Vec<String>,
    pub design_names: Vec<String>,
    pub dropped: usize,
    pub out: PathBuf,
    pub schema: DatasetSchema,
}

pub fn load(args: &DataArgs) -> CliResult<LoadedData> {
    let path = args.data.as_ref().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let responses = args.responses.clone().ok_or_else(|| CliError::Usage("--responses is required".into()))?;
    let mut schema = DatasetSchema::new(&[], &[]);
    schema.response_columns = responses;
    schema.covariate_columns = args.covariates.clone().unwrap_or_default();
    schema.log_transform = args.log_transform.clone().unwrap_or_default();
    schema.add_intercept = args.intercept.unwrap_or(true);
    for spec in args.categorical.clone().unwrap_or_default() {
        let (name, base) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("categorical '{spec}' is not name=baseline")))?;
        if !schema.covariate_columns.iter().any(|c| c == name) {
            schema.covariate_columns.push(name.to_string());
        }
        schema.categorical_columns.insert(name.to_string(), base.to_string());
    }
    schema.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dataset = load_csv(path, &schema)?;
    let (x, design_names) = encode_design(&dataset, &schema)?;
    Ok(LoadedData {
        y: dataset.y,
        x,
        responses: dataset.response_names,
        design_names,
        dropped: dataset.dropped,
        out: args.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        schema,
    })
}

fn schema_json(d: &LoadedData) -> Value {
    json!({
        "responses": d.schema.response_columns,
        "covariates": d.schema.covariate_columns,
        "categorical": d.schema.categorical_columns,
        "log_transform": d.schema.log_transform,
        "intercept": d.schema.add_intercept,
        "design_columns": d.design_names,
        "rows_used": d.y.nrows(),
        "rows_dropped": d.dropped,
    })
}

/// Estimation settings with defaults applied.
pub struct Estimation {
    pub taus: Vec<f64>,
    pub direction: Vec<f64>,
    pub c: CValue,
    pub delta: f64,
    pub folds: usize,
    pub grid: usize,
    pub cv_per_tau: bool,
    pub opts: IrlsOptions,
    pub seed: u64,
}

impl Estimation {
    pub fn resolve(args: &EstimateArgs, p: usize, seed: u64) -> CliResult<Self> {
        let taus = args.tau.clone().unwrap_or_else(|| vec![0.5]);
        if taus.is_empty() {
            return Err(CliError::Usage("no levels given".into()));
        }
        let direction = args.direction.clone().unwrap_or(Direction::Preset("equal-weights".into())).resolve(p)?;
        let defaults = IrlsOptions::default();
        Ok(Self {
            taus,
            direction,
            c: args.c.unwrap_or(CValue::Cv),
            delta: args.delta.unwrap_or(1.0),
            folds: args.folds.unwrap_or(5),
            grid: args.grid.unwrap_or(200),
            cv_per_tau: args.cv_per_tau.unwrap_or(true),
            opts: IrlsOptions {
                max_iter: args.max_iter.unwrap_or(defaults.max_iter),
                tol: args.tol.unwrap_or(defaults.tol),
                ..defaults
            },
            seed,
        })
    }

    fn spec(&self, tau: f64, c: f64) -> CliResult<MQuantileSpec> {
        Ok(MQuantileSpec::new(tau, &self.direction, HuberParams::new(c, self.delta)?)?)
    }

    fn cv(&self, y: &DMatrix<f64>, tau: f64) -> CliResult<CvResult> {
        let grid = c_grid(y, self.grid)?;
        Ok(cross_validate(y, &self.spec(tau, 1.0)?, self.folds, &grid, self.seed, &self.opts)?)
    }

    /// Tuning constant for every level, with the CV runs behind it. Without
    /// per-level selection the first level's choice is reused.
    pub fn choose_c(&self, y: &DMatrix<f64>) -> CliResult<Vec<(f64, Option<CvResult>)>> {
        match self.c {
            CValue::Value(c) => Ok(self.taus.iter().map(|_| (c, None)).collect()),
            CValue::Cv if self.cv_per_tau => {
                self.taus.iter().map(|&t| self.cv(y, t).map(|r| (r.c_star, Some(r)))).collect()
            }
            CValue::Cv => {
                let r = self.cv(y, self.taus[0])?;
                Ok(self.taus.iter().map(|_| (r.c_star, Some(r.clone()))).collect())
            }
        }
    }

    pub fn fit(&self, y: &DMatrix<f64>, tau: f64, c: f64) -> CliResult<MQuantileFit> {
        let fit = fit_unconditional(y, &self.spec(tau, c)?, &self.opts)?;
        if !fit.converged {
            return Err(mqrif::Error::NonConvergence(format!(
                "tau = {tau}, c = {c}: equation norm {:e} after {} iterations",
                fit.eq_norm, fit.iterations
            ))
            .into());
        }
        Ok(fit)
    }

    pub fn settings(&self) -> Value {
        json!({
            "tau": self.taus,
            "direction": self.direction,
            "c": match self.c { CValue::Value(c) => json!(c), CValue::Cv => json!("cv") },
            "delta": self.delta,
            "folds": self.folds,
            "grid": self.grid,
            "cv_per_tau": self.cv_per_tau,
            "max_iter": self.opts.max_iter,
            "tol": self.opts.tol,
        })
    }
}

fn fit_json(fit: &MQuantileFit, c: f64, cv: Option<&CvResult>) -> Value {
    json!({
        "tau": fit.spec.tau(),
        "c": c,
        "c_selected_by_cv": cv.is_some(),
        "iterations": fit.iterations,
        "eq_norm": fit.eq_norm,
        "converged": fit.converged,
        "theta": fit.theta.as_slice(),
    })
}

pub fn run_fit(data: &DataArgs, est: &EstimateArgs, seed: u64) -> CliResult<()> {
    let d = load(data)?;
    let e = Estimation::resolve(est, d.y.ncols(), seed)?;
    let choices = e.choose_c(&d.y)?;
    let mut out = OutputDir::create(&d.out)?;
    let mut theta_rows = Vec::new();
    let mut results = Vec::new();
    for (&tau, (c, cv)) in e.taus.iter().zip(&choices) {
        let fit = e.fit(&d.y, tau, *c)?;
        let mats = rif_covariance(&d.y, &fit)?;
        let label = tau_label(tau);
        out.matrix(&format!("m_hat_{label}.csv"), &d.responses, &mats.m_hat)?;
        out.matrix(&format!("d_hat_{label}.csv"), &d.responses, &mats.d_hat)?;
        out.matrix(&format!("delta_hat_{label}.csv"), &d.responses, &mats.delta_hat)?;
        let mut row = vec![fmt(tau), fmt(*c)];
        row.extend(fit.theta.iter().map(|v| fmt(*v)));
        theta_rows.push(row);
        let mut r = fit_json(&fit, *c, cv.as_ref());
        r["rif_correlation"] = matrix_json(&mats.r);
        r["m_condition"] = json!(mats.m_condition);
        r["skipped_rows"] = json!(mats.skipped_rows);
        results.push(r);
    }
    let mut headers = vec!["tau", "c"];
    headers.extend(d.responses.iter().map(String::as_str));
    out.table("theta.csv", &headers, &theta_rows)?;
    let settings = json!({ "data": schema_json(&d), "estimation": e.settings() });
    out.finish("fit", seed, settings, json!(results))
}

fn spline_config(model: &ModelArgs, d: &LoadedData) -> CliResult<SplineConfig> {
    let names = model.spline_covariates.clone().unwrap_or_default();
    let defaults = SplineConfig::default();
    let mut indices = Vec::new();
    for name in &names {
        let idx = d
            .design_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Usage(format!("spline covariate '{name}' is not a numeric design column")))?;
        indices.push(idx);
    }
    Ok(SplineConfig {
        covariate_indices: indices,
        degree: model.degree.unwrap_or(defaults.degree),
        interior_knots: model.knots.unwrap_or(defaults.interior_knots),
    })
}

fn rif_model(model: &ModelArgs, d: &LoadedData) -> CliResult<RifModel> {
    match model.method.as_deref().unwrap_or("linear") {
        "linear" => Ok(RifModel::Linear),
        "spline" => {
            let cfg = spline_config(model, d)?;
            if cfg.covariate_indices.is_empty() {
                return Err(CliError::Usage("--method spline needs --spline-covariates".into()));
            }
            Ok(RifModel::Spline(cfg))
        }
        other => Err(CliError::Usage(format!("unknown method '{other}'"))),
    }
}

fn model_json(model: &RifModel, d: &LoadedData) -> Value {
    match model {
        RifModel::Linear => json!({ "method": "linear" }),
        RifModel::Spline(cfg) => json!({
            "method": "spline",
            "spline_covariates": cfg.covariate_indices.iter().map(|&i| &d.design_names[i]).collect::<Vec<_>>(),
            "degree": cfg.degree,
            "knots": cfg.interior_knots,
        }),
    }
}

fn estimate(d: &LoadedData, fit: &MQuantileFit, model: &RifModel) -> CliResult<UpeFit> {
    Ok(match model {
        RifModel::Linear => umqpe_linear(&d.y, &d.x, fit)?,
        RifModel::Spline(cfg) => umqpe_splines(&d.y, &d.x, fit, cfg)?,
    })
}

pub fn run_upe(data: &DataArgs, est: &EstimateArgs, model: &ModelArgs, seed: u64) -> CliResult<()> {
    let d = load(data)?;
    let e = Estimation::resolve(est, d.y.ncols(), seed)?;
    let rif_model = rif_model(model, &d)?;
    let want_test = model.linearity_test.unwrap_or(false);
    let test_cfg = if want_test {
        let mut cfg = spline_config(model, &d)?;
        if cfg.covariate_indices.is_empty() {
            return Err(CliError::Usage("--linearity-test needs --spline-covariates".into()));
        }
        cfg.covariate_indices.sort_unstable();
        Some(cfg)
    } else {
        None
    };
    let choices = e.choose_c(&d.y)?;
    let mut out = OutputDir::create(&d.out)?;
    let mut summary = Vec::new();
    let mut results = Vec::new();
    for (&tau, (c, cv)) in e.taus.iter().zip(&choices) {
        let fit = e.fit(&d.y, tau, *c)?;
        let upe = estimate(&d, &fit, &rif_model)?;
        let mut rows = Vec::new();
        for a in 0..upe.alpha.nrows() {
            for j in 0..upe.alpha.ncols() {
                let se = upe.se.as_ref().map(|s| fmt(s[(a, j)])).unwrap_or_default();
                rows.push(vec![d.design_names[a].clone(), d.responses[j].clone(), fmt(upe.alpha[(a, j)]), se]);
            }
        }
        out.table(&format!("upe_{}.csv", tau_label(tau)), &["covariate", "response", "estimate", "se"], &rows)?;
        let r12 = if upe.rif_correlation.ncols() >= 2 { upe.rif_correlation[(0, 1)] } else { f64::NAN };
        summary.push(vec![fmt(tau), fmt(*c), fmt(r12), fmt(upe.omega_x_cond)]);
        let mut r = fit_json(&fit, *c, cv.as_ref());
        r["r12"] = json!(r12);
        r["omega_x_cond"] = json!(upe.omega_x_cond);
        if let Some(cfg) = &test_cfg {
            let t = linearity_test(&d.y, &d.x, &fit, cfg)?;
            r["linearity_test"] = json!({
                "pillai_trace": t.statistic,
                "f": t.f_stat,
                "df1": t.df1,
                "df2": t.df2,
                "p_value": t.p_value,
            });
        }
        results.push(r);
    }
    out.table("upe_summary.csv", &["tau", "c", "r12", "omega_x_cond"], &summary)?;
    let settings = json!({
        "data": schema_json(&d),
        "estimation": e.settings(),
        "model": model_json(&rif_model, &d),
        "linearity_test": want_test,
    });
    out.finish("upe", seed, settings, json!(results))
}

pub fn run_cv(data: &DataArgs, est: &EstimateArgs, seed: u64) -> CliResult<()> {
    if matches!(est.c, Some(CValue::Value(_))) {
        return Err(CliError::Usage("conflicting options: a fixed c cannot be combined with cross-validation".into()));
    }
    let d = load(data)?;
    let mut e = Estimation::resolve(est, d.y.ncols(), seed)?;
    e.c = CValue::Cv;
    e.cv_per_tau = true;
    let mut out = OutputDir::create(&d.out)?;
    let mut results = Vec::new();
    for (&tau, (c, cv)) in e.taus.iter().zip(e.choose_c(&d.y)?) {
        let cv = cv.expect("cross-validation ran");
        let rows: Vec<Vec<String>> = cv.grid.iter().zip(&cv.cv_scores).map(|(g, s)| vec![fmt(*g), fmt(*s)]).collect();
        out.table(&format!("cv_{}.csv", tau_label(tau)), &["c", "cv_score"], &rows)?;
        results.push(json!({
            "tau": tau,
            "c_star": c,
            "c_star_index": cv.c_star_index(),
            "failed_grid_values": cv.cv_scores.iter().filter(|s| !s.is_finite()).count(),
        }));
    }
    let settings = json!({ "data": schema_json(&d), "estimation": e.settings() });
    out.finish("cv", seed, settings, json!(results))
}

pub fn run_contour(data: &DataArgs, est: &EstimateArgs, cargs: &ContourArgs, seed: u64) -> CliResult<()> {
    let d = load(data)?;
    let e = Estimation::resolve(est, d.y.ncols(), seed)?;
    let m = cargs.directions.unwrap_or(DEFAULT_DIRECTIONS);
    let choices = e.choose_c(&d.y)?;
    let p = d.y.ncols();
    let mut out = OutputDir::create(&d.out)?;
    let mut results = Vec::new();
    for (&tau, (c, cv)) in e.taus.iter().zip(&choices) {
        let set = contour(&d.y, tau, HuberParams::new(*c, e.delta)?, m, seed, &e.opts)?;
        let mut headers: Vec<String> = (1..=p).map(|j| format!("u{j}")).collect();
        headers.extend(d.responses.iter().cloned());
        headers.push("converged".into());
        let body = DMatrix::from_fn(m, 2 * p + 1, |i, j| {
            if j < p {
                set.directions[i][j]
            } else if j < 2 * p {
                set.vertices[(i, j - p)]
            } else {
                f64::from(u8::from(set.converged[i]))
            }
        });
        let label = tau_label(tau);
        out.matrix(&format!("contour_{label}.csv"), &headers, &body)?;
        if p == 2 {
            let pts: Vec<[f64; 2]> =
                (0..m).filter(|&i| set.converged[i]).map(|i| [set.vertices[(i, 0)], set.vertices[(i, 1)]]).collect();
            out.text(&format!("contour_{label}.svg"), &contour_svg(&pts, tau))?;
        }
        results.push(json!({
            "tau": tau,
            "c": c,
            "c_selected_by_cv": cv.is_some(),
            "directions": m,
            "converged": set.converged.iter().filter(|c| **c).count(),
        }));
    }
    let settings = json!({ "data": schema_json(&d), "estimation": e.settings(), "directions": m });
    out.finish("contour", seed, settings, json!(results))
}

pub fn run_boot(
    data: &DataArgs,
    est: &EstimateArgs,
    model: &ModelArgs,
    rep: &ReplicationArgs,
    seed: u64,
) -> CliResult<()> {
    let d = load(data)?;
    let e = Estimation::resolve(est, d.y.ncols(), seed)?;
    let rif_model = rif_model(model, &d)?;
    let b = rep.reps.unwrap_or(1000);
    let level = rep.level.unwrap_or(0.95);
    let choices = e.choose_c(&d.y)?;
    let mut out = OutputDir::create(&d.out)?;
    let mut results = Vec::new();
    for (&tau, (c, cv)) in e.taus.iter().zip(&choices) {
        let fit = e.fit(&d.y, tau, *c)?;
        let upe = estimate(&d, &fit, &rif_model)?;
        let boot = bootstrap_ci(&d.y, &d.x, &fit.spec, &rif_model, b, level, seed, &e.opts)?;
        let mut rows = Vec::new();
        for a in 0..upe.alpha.nrows() {
            for j in 0..upe.alpha.ncols() {
                rows.push(vec![
                    d.design_names[a].clone(),
                    d.responses[j].clone(),
                    fmt(upe.alpha[(a, j)]),
                    fmt(boot.ci_lower[(a, j)]),
                    fmt(boot.ci_upper[(a, j)]),
                    fmt(boot.se_boot[(a, j)]),
                ]);
            }
        }
        out.table(
            &format!("boot_{}.csv", tau_label(tau)),
            &["covariate", "response", "estimate", "ci_lower", "ci_upper", "se_boot"],
            &rows,
        )?;
        let mut r = fit_json(&fit, *c, cv.as_ref());
        r["replicates"] = json!(boot.replicates);
        r["failed_replicates"] = json!(boot.failed);
        results.push(r);
    }
    let settings = json!({
        "data": schema_json(&d),
        "estimation": e.settings(),
        "model": model_json(&rif_model, &d),
        "reps": b,
        "level": level,
    });
    out.finish("boot", seed, settings, json!(results))
}

fn dgp(sim: &SimulateArgs, seed: u64, default_n: usize) -> CliResult<DgpConfig> {
    let kind: DgpKind = sim
        .kind
        .as_deref()
        .unwrap_or("gaussian-linear")
        .parse()
        .map_err(|e: mqrif::Error| CliError::Usage(e.to_string()))?;
    let mut cfg = DgpConfig::new(kind, sim.n.unwrap_or(default_n), seed);
    if let Some(r) = sim.contamination {
        cfg.contamination_rate = r;
    }
    if let Some(r) = sim.correlation {
        cfg.correlation = r;
    }
    if let Some(s) = sim.noise {
        cfg.noise_scale = s;
    }
    Ok(cfg)
}

pub fn run_simulate(sim: &SimulateArgs, seed: u64) -> CliResult<()> {
    let cfg = dgp(sim, seed, 1000)?;
    let data = simulate(&cfg)?;
    let (p, k) = (data.y.ncols(), data.x.ncols());
    let mut headers: Vec<String> = (1..=p).map(|j| format!("y{j}")).collect();
    headers.extend((1..k).map(|j| format!("x{j}")));
    let body =
        DMatrix::from_fn(data.y.nrows(), p + k - 1, |i, j| if j < p { data.y[(i, j)] } else { data.x[(i, j - p + 1)] });
    let path = sim.output.clone().unwrap_or_else(|| PathBuf::from("simulated.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    mqrif::io::write_matrix_csv(file, &headers, &body)?;
    Ok(())
}

pub fn run_coverage(
    sim: &SimulateArgs,
    est: &EstimateArgs,
    rep: &ReplicationArgs,
    out: Option<PathBuf>,
    seed: u64,
) -> CliResult<()> {
    let cfg = dgp(sim, seed, 2000)?;
    let e = Estimation::resolve(est, cfg.b.ncols(), seed)?;
    let CValue::Value(c) = est.c.unwrap_or(CValue::Value(1e6)) else {
        return Err(CliError::Usage("coverage needs a fixed c".into()));
    };
    let reps = rep.reps.unwrap_or(500);
    let level = rep.level.unwrap_or(0.95);
    let mut dir = OutputDir::create(&out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)))?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &tau in &e.taus {
        let report = oracle::run_coverage(&cfg, &e.spec(tau, c)?, reps, level)?;
        rows.push(vec![
            fmt(tau),
            fmt(c),
            fmt(level),
            reps.to_string(),
            report.failed.to_string(),
            fmt(report.coverage),
        ]);
        results.push(
            json!({ "tau": tau, "coverage": report.coverage, "intervals": report.intervals, "failed": report.failed }),
        );
    }
    dir.table("coverage.csv", &["tau", "c", "level", "reps", "failed", "coverage"], &rows)?;
    let settings = json!({
        "dgp": { "kind": cfg.kind.name(), "n": cfg.n, "noise": cfg.noise_scale, "correlation": cfg.correlation, "contamination": cfg.contamination_rate },
        "tau": e.taus,
        "direction": e.direction,
        "c": c,
        "delta": e.delta,
        "reps": reps,
        "level": level,
    });
    dir.finish("coverage", seed, settings, json!(results))
}
