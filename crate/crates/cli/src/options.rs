//! Command-line flags and the matching config-file keys.
//!
//! Every option group is parsed twice: from the command line and from the
//! TOML file given with `--config`. A flag wins over the file, and the file
//! wins over the built-in default.

use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Keys accepted in a config file.
pub const CONFIG_KEYS: &[&str] = &[
    "data",
    "out",
    "responses",
    "covariates",
    "categorical",
    "log_transform",
    "intercept",
    "tau",
    "direction",
    "c",
    "delta",
    "folds",
    "grid",
    "cv_per_tau",
    "max_iter",
    "tol",
    "method",
    "spline_covariates",
    "degree",
    "knots",
    "linearity_test",
    "reps",
    "level",
    "directions",
    "kind",
    "n",
    "contamination",
    "correlation",
    "noise",
    "output",
    "seed",
    "threads",
];

macro_rules! overlay {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $ty {
            /// Fills every unset field from `file`.
            pub fn overlay(mut self, file: Self) -> Self {
                $( if self.$field.is_none() { self.$field = file.$field; } )*
                self
            }
        }
    };
}

/// Tuning constant: a value or `cv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CValue {
    Value(f64),
    #[serde(deserialize_with = "cv_keyword")]
    Cv,
}

fn cv_keyword<'de, D: serde::Deserializer<'de>>(d: D) -> Result<(), D::Error> {
    let s = String::deserialize(d)?;
    if s == "cv" {
        Ok(())
    } else {
        Err(serde::de::Error::custom(format!("expected a number or \"cv\", got \"{s}\"")))
    }
}

impl FromStr for CValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "cv" {
            return Ok(CValue::Cv);
        }
        s.parse::<f64>().map(CValue::Value).map_err(|_| format!("expected a number or \"cv\", got \"{s}\""))
    }
}

/// Direction: explicit components or the `equal-weights` preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Direction {
    Vector(Vec<f64>),
    Preset(String),
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            return Ok(Direction::Preset(s.to_string()));
        }
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad direction component '{t}'")))
            .collect::<Result<Vec<_>, _>>()
            .map(Direction::Vector)
    }
}

impl Direction {
    pub fn resolve(&self, p: usize) -> CliResult<Vec<f64>> {
        match self {
            Direction::Preset(name) if name == "equal-weights" => Ok(vec![1.0 / (p as f64).sqrt(); p]),
            Direction::Preset(name) => Err(CliError::Usage(format!("unknown direction preset '{name}'"))),
            Direction::Vector(v) if v.len() == p => Ok(v.clone()),
            Direction::Vector(v) => {
                Err(CliError::Usage(format!("direction has {} components but there are {p} responses", v.len())))
            }
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Response columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub responses: Option<Vec<String>>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Categorical covariate with its baseline level, as `name=baseline`.
    #[arg(long)]
    pub categorical: Option<Vec<String>>,
    /// Columns replaced by their natural logarithm.
    #[arg(long = "log", value_delimiter = ',')]
    pub log_transform: Option<Vec<String>>,
    /// Add a constant column to the design (default true).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub intercept: Option<bool>,
}
overlay!(DataArgs { data, out, responses, covariates, categorical, log_transform, intercept });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct EstimateArgs {
    /// Levels in (0, 1), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// `equal-weights` or comma-separated components.
    #[arg(long)]
    pub direction: Option<Direction>,
    /// Tuning constant, or `cv` to choose it by cross-validation.
    #[arg(long)]
    pub c: Option<CValue>,
    /// Exponent of the angular weight (default 1).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Number of candidate values of c.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Choose c separately for every level.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cv_per_tau: Option<bool>,
    /// IRLS iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// IRLS convergence tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}
overlay!(EstimateArgs { tau, direction, c, delta, folds, grid, cv_per_tau, max_iter, tol });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct ModelArgs {
    /// `linear` or `spline`.
    #[arg(long)]
    pub method: Option<String>,
    /// Design columns expanded in B-splines with the spline method.
    #[arg(long, value_delimiter = ',')]
    pub spline_covariates: Option<Vec<String>>,
    /// Spline degree (default 3).
    #[arg(long)]
    pub degree: Option<usize>,
    /// Interior knots per spline covariate.
    #[arg(long)]
    pub knots: Option<usize>,
    /// Also test the linear RIF model against the spline model.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub linearity_test: Option<bool>,
}
overlay!(ModelArgs { method, spline_covariates, degree, knots, linearity_test });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct ReplicationArgs {
    /// Bootstrap resamples or Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Confidence level.
    #[arg(long)]
    pub level: Option<f64>,
}
overlay!(ReplicationArgs { reps, level });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct ContourArgs {
    /// Number of directions.
    #[arg(long)]
    pub directions: Option<usize>,
}
overlay!(ContourArgs { directions });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    /// `gaussian-linear`, `contaminated` or `correlated-gaussian`.
    #[arg(long)]
    pub kind: Option<String>,
    /// Number of observations.
    #[arg(long)]
    pub n: Option<usize>,
    /// Share of rows with heavy-tailed errors (contaminated kind).
    #[arg(long)]
    pub contamination: Option<f64>,
    /// Error correlation between the two responses.
    #[arg(long)]
    pub correlation: Option<f64>,
    /// Error standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Output CSV file.
    #[arg(long)]
    pub output: Option<PathBuf>,
}
overlay!(SimulateArgs { kind, n, contamination, correlation, noise, output });

/// Keys shared by every command.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct GlobalFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Parsed config file, kept as a table so each option group can read its
/// own keys.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile(toml::Table);

impl ConfigFile {
    pub fn load(path: Option<&PathBuf>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)?;
        let table: toml::Table = toml::from_str(&text)?;
        if let Some(key) = table.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(CliError::Usage(format!("unknown config key '{key}'")));
        }
        Ok(Self(table))
    }

    pub fn group<T: for<'de> Deserialize<'de> + Default>(&self) -> CliResult<T> {
        Ok(toml::Value::Table(self.0.clone()).try_into()?)
    }
}
