//! Generalized normal modelling of gradient entries.
//!
//! Provides the GenNorm density, CDF, quantile and sampler, the
//! kurtosis-matching fit, the three comparison families (normal, Laplace,
//! double Weibull) and the quantile-based W2 distance used to rank fits.

mod families;
mod gennorm;
mod stats;
mod wasserstein;

pub use families::{best_fit, fit_all_families, fit_family, Family, FamilyFit, FamilyParams};
pub use gennorm::{fit_gennorm, kurtosis_of_shape, shape_from_kurtosis, GenNormParams, BETA_MAX, BETA_MIN};
pub use stats::{sample_stats, SampleStats};
pub use wasserstein::{w2_distance, wasserstein_distance, W2Form};
