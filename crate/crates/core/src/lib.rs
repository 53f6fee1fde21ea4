//! Unconditional multivariate M-quantile and expectile regression through
//! recentered influence functions.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contour;
pub mod error;
pub mod huber;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod regression;
pub mod rif;
pub mod solver;
pub mod tuning;

pub use error::{Error, Result};
pub use huber::{EtaForm, HuberParams, JacobianMethod, MQuantileSpec};
pub use solver::{ConditionalFit, IrlsInit, IrlsOptions, MQuantileFit};
