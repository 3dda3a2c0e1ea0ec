//! Fixed-effects OLS: within transformation, QR least squares, two-way
//! clustered covariance, and marginal-effect curves.

pub mod cov;
pub mod demean;
pub mod fit;
pub mod marginal;
pub mod ols;

pub use cov::{one_way_cov, two_way_cov, ClusterCov};
pub use demean::{drop_singletons, within_transform, Factor};
pub use fit::{
    estimate, fit, format_table, named_specs, spec_by_name, stars, Coefficient, Estimate, FeFactor, FeOptions,
    FitResult, RegressionSpec, Regressor, Sample,
};
pub use marginal::{marginal_effects, MarginalCurve, MarginalPoint, DEFAULT_GRID_KM};
pub use ols::{ols, OlsFit};
