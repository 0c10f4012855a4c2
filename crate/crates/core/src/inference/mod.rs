//! Uncertainty quantification: asymptotic standard errors, the residual
//! bootstrap, and profile-likelihood intervals.

mod bootstrap;
mod profile;

pub use bootstrap::{replicate_response, residual_bootstrap, BootstrapOptions, BootstrapResult, Replicate};
pub use profile::{
    confidence_curve_trace, profile_interval, profile_interval_with, ProfileInterval, ProfileOptions,
    ProfileProblem, SigmaMode, TbsProfile, TracePoint,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::model::Param;
use crate::scalar::Scalar;

/// Which variance estimate scales `(JᵀJ)⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimate {
    /// `RSS / n`, the maximum-likelihood value.
    #[default]
    MaximumLikelihood,
    /// `RSS / (n − p)`.
    DfCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticSe<T> {
    pub se: [T; 3],
    /// Parameters at the bound 0, where the normal approximation behind the
    /// standard error does not hold.
    pub at_bound: Vec<Param>,
    pub variance: VarianceEstimate,
}

/// Square roots of the diagonal of `σ̂²(JᵀJ)⁻¹`.
pub fn asymptotic_se<T: Scalar>(fit: &FitResult<T>, variance: VarianceEstimate) -> Result<AsymptoticSe<T>> {
    if !fit.converged {
        return Err(Error::InvalidInput("standard errors need a converged fit".into()));
    }
    let scale = match variance {
        VarianceEstimate::MaximumLikelihood => T::one(),
        VarianceEstimate::DfCorrected if fit.sigma2 > T::zero() => fit.sigma2_df / fit.sigma2,
        VarianceEstimate::DfCorrected => T::one(),
    };
    let mut se = [T::zero(); 3];
    for (k, s) in se.iter_mut().enumerate() {
        let v = fit.cov_theta[k][k] * scale;
        if !v.is_finite() || v < T::zero() {
            return Err(Error::Collinear(format!(
                "covariance diagonal for {} is {v}",
                Param::ALL[k].name()
            )));
        }
        *s = v.sqrt();
    }
    Ok(AsymptoticSe {
        se,
        at_bound: fit.active_bounds.clone(),
        variance,
    })
}
