//! Source apportionment of residential soil lead.
//!
//! Soil-lead concentrations are modeled as
//! `log L = log(θ0 + θ1·T_y + θ2·G_y) + ε`, where `T_y` and `G_y` are
//! cumulative paint and gasoline lead exposures for a structure built in
//! year `y`. The crate builds those exposures from yearly consumption
//! series, fits the model by constrained maximum likelihood, quantifies
//! uncertainty (asymptotic, residual bootstrap, profile likelihood), splits
//! the fitted mean into background / paint / gasoline fractions, runs a
//! battery of regression diagnostics, and simulates data under the base
//! model and its measurement-error extensions.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below name the common instantiations.

// `!(x > 0)` is used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apportion;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub(crate) mod linalg;
pub mod model;
pub mod scalar;
pub mod series;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Version stamped into every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

pub type Theta64 = model::Theta<f64>;
pub type Theta32 = model::Theta<f32>;
pub type DesignPoint64 = model::DesignPoint<f64>;
pub type DesignPoint32 = model::DesignPoint<f32>;
pub type YearlySeries64 = series::YearlySeries<f64>;
pub type YearlySeries32 = series::YearlySeries<f32>;
pub type CumulativeExposure64 = series::CumulativeExposure<f64>;
pub type CumulativeExposure32 = series::CumulativeExposure<f32>;
pub type FitResult64 = estimator::FitResult<f64>;
pub type FitResult32 = estimator::FitResult<f32>;
pub type BootstrapResult64 = inference::BootstrapResult<f64>;
pub type ProfileInterval64 = inference::ProfileInterval<f64>;

pub type DiagnosticsReport64 = diagnostics::DiagnosticsReport<f64>;

pub type ApportionmentCurve64 = apportion::ApportionmentCurve<f64>;
pub type Dataset64 = dataset::Dataset<f64>;
pub type SimConfig64 = simulator::SimConfig<f64>;
