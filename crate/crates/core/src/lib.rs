//! Stochastic differential equations with subject-level random effects drawn
//! from a finite normal mixture: simulation, exact likelihood over path
//! sufficient statistics, EM/quasi-Newton/MCMC fitting, and Monte Carlo
//! checks of the large-sample behaviour of the estimators.

// Negated comparisons are used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod bayes;
pub mod chart;
pub mod cli;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod mle;
pub mod model;
pub mod multidim;
pub mod simulate;
pub mod stats;
pub mod suffstats;

pub use chart::Chart;
pub use error::{Error, Result};
pub use model::{MixtureParams, ParamBox, SdeModel, SubjectDesign};
pub use simulate::{Cohort, Path};
pub use suffstats::SuffStats;
