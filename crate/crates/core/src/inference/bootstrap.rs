use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{fit, FitOptions, FitResult};
use crate::model::{DesignPoint, Theta};
use crate::scalar::{sample_sd, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Resample leverage-adjusted residuals `e_i / √(1 − h_ii)` instead of
    /// the raw residuals.
    pub studentized: bool,
    /// Largest tolerated fraction of failed refits.
    pub max_failure_rate: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 100,
            seed: 0,
            studentized: false,
            max_failure_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicate<T> {
    /// Replicate index; its response can be regenerated with
    /// [`replicate_response`].
    pub index: usize,
    pub theta: Theta<T>,
    pub sigma2: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult<T> {
    pub seed: u64,
    pub requested: usize,
    pub studentized: bool,
    /// Successful replicates, in index order.
    pub replicates: Vec<Replicate<T>>,
    /// Replicate standard deviation of each parameter.
    pub se_theta: [T; 3],
    pub se_sigma2: T,
    /// Refits that failed; excluded from every statistic above.
    pub failures: usize,
    pub failed_indices: Vec<usize>,
}

fn resampling_pool<T: Scalar>(fit: &FitResult<T>, studentized: bool) -> Result<Vec<T>> {
    if !studentized {
        return Ok(fit.residuals.clone());
    }
    let h = crate::diagnostics::leverage(&fit.jacobian)?;
    fit.residuals
        .iter()
        .zip(&h)
        .map(|(&e, &h)| {
            let q = T::one() - h;
            if q > T::tol(1e-12) {
                Ok(e / q.sqrt())
            } else {
                Err(Error::InvalidInput("studentized bootstrap: a sample has leverage 1".into()))
            }
        })
        .collect()
}

fn response_from_pool<T: Scalar>(fitted: &[T], pool: &[T], seed: u64, index: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let n = pool.len();
    fitted
        .iter()
        .map(|&mu| mu + pool[rng.random_range(0..n)])
        .collect()
}

/// The bootstrap response `log L* = log η̂ + e*` of replicate `index`.
///
/// Residuals are drawn with replacement and are not mean-centered.
pub fn replicate_response<T: Scalar>(
    fit: &FitResult<T>,
    data: &[DesignPoint<T>],
    opts: &BootstrapOptions,
    index: usize,
) -> Result<Vec<T>> {
    let pool = resampling_pool(fit, opts.studentized)?;
    Ok(response_from_pool(&fit.fitted_log(data), &pool, opts.seed, index))
}

/// Residual bootstrap. Each replicate refits from `θ̂`; the result does not
/// depend on the number of worker threads.
pub fn residual_bootstrap<T: Scalar>(
    fit_result: &FitResult<T>,
    data: &[DesignPoint<T>],
    opts: &BootstrapOptions,
) -> Result<BootstrapResult<T>> {
    if !fit_result.converged {
        return Err(Error::InvalidInput("bootstrap needs a converged fit".into()));
    }
    if opts.replicates == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least one replicate".into()));
    }
    let pool = resampling_pool(fit_result, opts.studentized)?;
    let fitted = fit_result.fitted_log(data);
    let refit_opts = FitOptions::starting_at(fit_result.theta);

    let outcomes: Vec<Option<Replicate<T>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let y = response_from_pool(&fitted, &pool, opts.seed, b);
            let star: Vec<DesignPoint<T>> = data
                .iter()
                .zip(&y)
                .map(|(p, &y)| DesignPoint { log_concentration: y, ..*p })
                .collect();
            fit(&star, &refit_opts).ok().map(|f| Replicate {
                index: b,
                theta: f.theta,
                sigma2: f.sigma2,
            })
        })
        .collect();

    let failed_indices: Vec<usize> = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_none())
        .map(|(b, _)| b)
        .collect();
    let failures = failed_indices.len();
    if failures as f64 > opts.max_failure_rate * opts.replicates as f64 {
        return Err(Error::BootstrapFailures {
            failures,
            replicates: opts.replicates,
        });
    }
    let replicates: Vec<Replicate<T>> = outcomes.into_iter().flatten().collect();
    let column = |k: usize| -> Vec<T> { replicates.iter().map(|r| r.theta.to_array()[k]).collect() };
    let se_theta = [0, 1, 2].map(|k| sample_sd(&column(k)));
    let se_sigma2 = sample_sd(&replicates.iter().map(|r| r.sigma2).collect::<Vec<_>>());
    Ok(BootstrapResult {
        seed: opts.seed,
        requested: opts.replicates,
        studentized: opts.studentized,
        replicates,
        se_theta,
        se_sigma2,
        failures,
        failed_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::linear_predictor;

    fn data(noise: bool) -> Vec<DesignPoint<f64>> {
        (0..40)
            .map(|i| {
                let t = 3.0 * (-(i as f64) / 15.0).exp();
                let g = (i as f64 / 8.0).sin().abs() * 4.0;
                let e = if noise { ((i * 37) % 11) as f64 / 11.0 - 0.45 } else { 0.0 };
                DesignPoint {
                    paint_exposure: t,
                    gas_exposure: g,
                    log_concentration: linear_predictor(&Theta::new(10.0, 80.0, 5.0), t, g).ln() + e,
                    year_built: 1900 + i,
                }
            })
            .collect()
    }

    #[test]
    fn zero_residuals_give_zero_se() {
        let d = data(false);
        let f = fit(&d, &FitOptions::default()).unwrap();
        let exact = crate::estimator::result_at(f.theta, &d, 0, true).unwrap();
        let zeroed = FitResult {
            residuals: vec![0.0; d.len()],
            ..exact
        };
        let d0: Vec<_> = d
            .iter()
            .zip(zeroed.fitted_log(&d))
            .map(|(p, m)| DesignPoint { log_concentration: m, ..*p })
            .collect();
        let b = residual_bootstrap(&zeroed, &d0, &BootstrapOptions { replicates: 20, ..Default::default() }).unwrap();
        assert_eq!(b.failures, 0);
        assert_eq!(b.se_theta, [0.0; 3]);
        for r in &b.replicates {
            assert_eq!(r.theta, zeroed.theta);
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let d = data(true);
        let f = fit(&d, &FitOptions::default()).unwrap();
        let opts = BootstrapOptions { replicates: 30, seed: 7, ..Default::default() };
        let a = residual_bootstrap(&f, &d, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| residual_bootstrap(&f, &d, &opts).unwrap());
        assert_eq!(a, b);
        assert!(a.se_theta.iter().all(|s| *s > 0.0));
        let y = replicate_response(&f, &d, &opts, 3).unwrap();
        let fitted = f.fitted_log(&d);
        // every bootstrap residual is one of the original residuals
        for (yi, mi) in y.iter().zip(&fitted) {
            let e = yi - mi;
            assert!(f.residuals.iter().any(|r| (r - e).abs() < 1e-12));
        }
    }
}
