//! Maximum-likelihood fitting of the log-sum model.
//!
//! With `σ²` profiled out as `RSS / n`, maximizing the likelihood is the
//! same as minimizing the log-scale residual sum of squares subject to
//! `θ ≥ 0`. The minimizer is a projected Levenberg-Marquardt iteration:
//! coordinates sitting on the bound whose gradient points outward are held
//! fixed, the damped Gauss-Newton system is solved on the rest, and the
//! trial point is clipped back onto the feasible set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, SymMatrix};
use crate::model::{self, DesignPoint, Param, Theta};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub max_iterations: usize,
    /// Relative decrease in RSS below which an accepted step counts as stalled.
    pub objective_tol: f64,
    /// Relative step length (in the `diag(JᵀJ)` metric) below which the
    /// iterate counts as stalled. Both tolerances must hold to stop.
    pub step_tol: f64,
    /// Starting point; defaults to [`initial_theta`].
    pub start: Option<Theta<T>>,
    /// Also start from three deterministic perturbations of the starting
    /// point and keep the lowest objective.
    pub restarts: bool,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            objective_tol: 1e-10,
            step_tol: 1e-8,
            start: None,
            restarts: true,
        }
    }
}

impl<T: Scalar> FitOptions<T> {
    pub fn starting_at(theta: Theta<T>) -> Self {
        Self {
            start: Some(theta),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub theta: Theta<T>,
    /// Maximum-likelihood variance `RSS / n`.
    pub sigma2: T,
    /// Degrees-of-freedom corrected `RSS / (n - p)`.
    pub sigma2_df: T,
    /// Log-scale residuals `log L_i - log η_i`, in data order.
    pub residuals: Vec<T>,
    /// Rows `∂ log η_i / ∂θ` at the optimum.
    pub jacobian: Vec<[T; 3]>,
    /// `σ̂² (JᵀJ)⁻¹`. Rows and columns of unidentified parameters are zero.
    pub cov_theta: [[T; 3]; 3],
    pub converged: bool,
    pub iterations: usize,
    /// Parameters estimated exactly at the lower bound 0.
    pub active_bounds: Vec<Param>,
    /// Parameters whose exposure column is identically zero.
    pub unidentified: Vec<Param>,
    pub rss: T,
}

impl<T: Scalar> FitResult<T> {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn sigma(&self) -> T {
        self.sigma2.sqrt()
    }

    pub fn residual_mean(&self) -> T {
        crate::scalar::mean(&self.residuals)
    }

    /// Number of identified parameters.
    pub fn rank(&self) -> usize {
        3 - self.unidentified.len()
    }

    /// Maximized log-likelihood.
    pub fn log_likelihood(&self) -> T {
        model::profiled_log_likelihood(self.rss, self.n())
    }

    /// `log η̂_i` for every sample.
    pub fn fitted_log(&self, data: &[DesignPoint<T>]) -> Vec<T> {
        data.iter()
            .map(|p| model::point_predictor(&self.theta, p).ln())
            .collect()
    }

    pub fn report(&self) -> FitReport {
        let f = |x: T| x.to_f64_lossy();
        let cov = self.cov_theta.map(|row| row.map(f));
        FitReport {
            schema_version: crate::SCHEMA_VERSION,
            theta: ThetaReport {
                background: f(self.theta.background),
                paint_rate: f(self.theta.paint_rate),
                gas_rate: f(self.theta.gas_rate),
            },
            sigma: f(self.sigma()),
            sigma2: f(self.sigma2),
            sigma2_df: f(self.sigma2_df),
            cov,
            se: [0, 1, 2].map(|k| cov[k][k].max(0.0).sqrt()),
            residual_mean: f(self.residual_mean()),
            converged: self.converged,
            iterations: self.iterations,
            n: self.n(),
            rss: f(self.rss),
            log_likelihood: f(self.log_likelihood()),
            active_bounds: self.active_bounds.clone(),
            unidentified: self.unidentified.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaReport {
    pub background: f64,
    pub paint_rate: f64,
    pub gas_rate: f64,
}

/// JSON view of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub theta: ThetaReport,
    pub sigma: f64,
    pub sigma2: f64,
    pub sigma2_df: f64,
    pub cov: [[f64; 3]; 3],
    pub se: [f64; 3],
    pub residual_mean: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n: usize,
    pub rss: f64,
    pub log_likelihood: f64,
    pub active_bounds: Vec<Param>,
    pub unidentified: Vec<Param>,
}

/// Least squares of raw concentration on `(1, T, G)`, clipped to `θ ≥ 0`.
/// Falls back to `(geometric mean of L, 0, 0)` when everything clips.
pub fn initial_theta<T: Scalar>(data: &[DesignPoint<T>]) -> Theta<T> {
    let rows: Vec<[T; 3]> = data.iter().map(|p| p.regressors()).collect();
    let y: Vec<T> = data.iter().map(|p| p.log_concentration.exp()).collect();
    let geo_mean = crate::scalar::mean(
        &data.iter().map(|p| p.log_concentration).collect::<Vec<_>>(),
    )
    .exp();
    let ols = least_squares(&rows, &y, 3, T::tol(1e-12));
    let clipped = match ols {
        Some(b) => [b[0], b[1], b[2]].map(|v| if v.is_finite() { v.max(T::zero()) } else { T::zero() }),
        None => [T::zero(); 3],
    };
    if clipped.iter().all(|v| *v == T::zero()) {
        Theta::new(geo_mean, T::zero(), T::zero())
    } else {
        Theta::from_array(clipped)
    }
}

/// Outcome of a single constrained minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Minimum<T> {
    pub theta: [T; 3],
    pub rss: T,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn objective<T: Scalar>(theta: &[T; 3], data: &[DesignPoint<T>]) -> Option<T> {
    let th = Theta::from_array(*theta);
    let mut s = T::zero();
    for p in data {
        let eta = model::point_predictor(&th, p);
        if !(eta > T::zero()) {
            return None;
        }
        let e = p.log_concentration - eta.ln();
        s = s + e * e;
    }
    s.is_finite().then_some(s)
}

/// Columns of the design that are identically zero.
pub(crate) fn zero_columns<T: Scalar>(data: &[DesignPoint<T>]) -> [bool; 3] {
    let mut nz = [true, false, false];
    for p in data {
        nz[1] |= p.paint_exposure != T::zero();
        nz[2] |= p.gas_exposure != T::zero();
    }
    nz.map(|b| !b)
}

/// Projected LM from `start` with optionally fixed coordinates.
pub(crate) fn minimize<T: Scalar>(
    data: &[DesignPoint<T>],
    start: [T; 3],
    fixed: [Option<T>; 3],
    opts: &FitOptions<T>,
) -> Option<Minimum<T>> {
    let zero_col = zero_columns(data);
    let mut theta = start;
    for k in 0..3 {
        if let Some(v) = fixed[k] {
            theta[k] = v;
        } else if zero_col[k] {
            theta[k] = T::zero();
        } else {
            theta[k] = theta[k].max(T::zero());
        }
    }
    let mut rss = objective(&theta, data)?;
    let obj_tol = T::tol(opts.objective_tol);
    let step_tol = T::tol(opts.step_tol);
    let mut lambda = T::lit(1e-3);
    let lambda_max = T::lit(1e16);

    for iter in 1..=opts.max_iterations {
        if rss == T::zero() {
            return Some(Minimum { theta, rss, iterations: iter - 1, converged: true });
        }
        // gradient g = Jᵀr and Gauss-Newton matrix A = JᵀJ
        let th = Theta::from_array(theta);
        let mut g = [T::zero(); 3];
        let mut jrows = Vec::with_capacity(data.len());
        for p in data {
            let eta = model::point_predictor(&th, p);
            let x = p.regressors();
            let j = [x[0] / eta, x[1] / eta, x[2] / eta];
            let r = p.log_concentration - eta.ln();
            for k in 0..3 {
                g[k] = g[k] + j[k] * r;
            }
            jrows.push(j);
        }
        let a = SymMatrix::gram(&jrows, 3);
        let free: Vec<usize> = (0..3)
            .filter(|&k| {
                fixed[k].is_none()
                    && a.get(k, k) > T::zero()
                    && !(theta[k] <= T::zero() && g[k] <= T::zero())
            })
            .collect();
        if free.is_empty() || free.iter().all(|&k| g[k] == T::zero()) {
            return Some(Minimum { theta, rss, iterations: iter - 1, converged: true });
        }
        let a_ff = a.select(&free);
        let g_f: Vec<T> = free.iter().map(|&k| g[k]).collect();

        let mut accepted = None;
        while lambda <= lambda_max {
            let mut damped = a_ff.clone();
            for i in 0..free.len() {
                damped.set(i, i, a_ff.get(i, i) * (T::one() + lambda));
            }
            if let Some(d) = damped.solve(&g_f, T::epsilon()) {
                let mut trial = theta;
                for (i, &k) in free.iter().enumerate() {
                    trial[k] = (theta[k] + d[i]).max(T::zero());
                }
                if let Some(trial_rss) = objective(&trial, data) {
                    if trial_rss < rss {
                        accepted = Some((trial, trial_rss));
                        lambda = (lambda / T::lit(10.0)).max(T::lit(1e-12));
                        break;
                    }
                }
            }
            lambda = lambda * T::lit(10.0);
        }

        let Some((trial, trial_rss)) = accepted else {
            // no descent available at working precision
            return Some(Minimum { theta, rss, iterations: iter, converged: true });
        };
        let rel_dec = (rss - trial_rss) / rss;
        let mut step2 = T::zero();
        let mut size2 = T::zero();
        for k in 0..3 {
            let w = a.get(k, k);
            step2 = step2 + (trial[k] - theta[k]) * (trial[k] - theta[k]) * w;
            size2 = size2 + trial[k] * trial[k] * w;
        }
        let rel_step = if size2 > T::zero() {
            (step2 / size2).sqrt()
        } else {
            step2.sqrt()
        };
        theta = trial;
        rss = trial_rss;
        if rel_dec < obj_tol && rel_step < step_tol {
            return Some(Minimum { theta, rss, iterations: iter, converged: true });
        }
    }
    Some(Minimum {
        theta,
        rss,
        iterations: opts.max_iterations,
        converged: false,
    })
}

/// Deterministic alternative starting points around `base`.
fn perturbed_starts<T: Scalar>(base: [T; 3], data: &[DesignPoint<T>]) -> Vec<[T; 3]> {
    let zero_col = zero_columns(data);
    let n = T::from_usize_lossy(data.len());
    let mean_t = data.iter().map(|p| p.paint_exposure).sum::<T>() / n;
    let mean_g = data.iter().map(|p| p.gas_exposure).sum::<T>() / n;
    let eta_bar = base[0] + base[1] * mean_t + base[2] * mean_g;
    let quarter = T::lit(0.25) * eta_bar;
    let means = [T::one(), mean_t, mean_g];
    let v: [T; 3] = std::array::from_fn(|k| {
        if zero_col[k] {
            T::zero()
        } else if base[k] > T::zero() {
            base[k]
        } else {
            quarter / means[k]
        }
    });
    let factors = [[2.0, 0.5, 2.0], [0.5, 2.0, 0.5], [1.5, 1.0, 0.25]];
    factors
        .iter()
        .map(|f| std::array::from_fn(|k| v[k] * T::lit(f[k])))
        .collect()
}

/// Best of the restarts for a (possibly partially fixed) problem.
pub(crate) fn minimize_with_restarts<T: Scalar>(
    data: &[DesignPoint<T>],
    base: [T; 3],
    fixed: [Option<T>; 3],
    opts: &FitOptions<T>,
) -> Option<Minimum<T>> {
    let mut starts = vec![base];
    if opts.restarts {
        starts.extend(perturbed_starts(base, data));
    }
    let mut best: Option<Minimum<T>> = None;
    for s in starts {
        let mut s = s;
        if objective(&s, data).is_none() && fixed[0].is_none() {
            // lift the background until every predictor is positive
            let geo = crate::scalar::mean(
                &data.iter().map(|p| p.log_concentration).collect::<Vec<_>>(),
            )
            .exp();
            s[0] = s[0].max(T::lit(0.1) * geo);
        }
        if let Some(m) = minimize(data, s, fixed, opts) {
            let better = match &best {
                None => true,
                Some(b) => (m.converged && !b.converged) || (m.converged == b.converged && m.rss < b.rss),
            };
            if better {
                best = Some(m);
            }
        }
    }
    best
}

fn check_design<T: Scalar>(data: &[DesignPoint<T>]) -> Result<()> {
    if data.len() < 4 {
        return Err(Error::DegenerateDesign(format!(
            "need at least 4 samples, got {}",
            data.len()
        )));
    }
    if data
        .iter()
        .any(|p| !p.log_concentration.is_finite() || !(p.paint_exposure >= T::zero()) || !(p.gas_exposure >= T::zero()))
    {
        return Err(Error::InvalidInput(
            "log concentrations must be finite and exposures nonnegative".into(),
        ));
    }
    let first = data[0];
    let t_const = data.iter().all(|p| p.paint_exposure == first.paint_exposure);
    let g_const = data.iter().all(|p| p.gas_exposure == first.gas_exposure);
    if t_const && g_const {
        return Err(Error::DegenerateDesign(
            "paint and gasoline exposures are both constant".into(),
        ));
    }
    Ok(())
}

/// Jacobian rows of `log η` at `theta`.
pub fn jacobian<T: Scalar>(theta: &Theta<T>, data: &[DesignPoint<T>]) -> Result<Vec<[T; 3]>> {
    data.iter()
        .map(|p| model::log_mean(theta, p).map(|m| m.gradient))
        .collect()
}

/// `σ² (JᵀJ)⁻¹` over the identified columns (nonzero columns of `J`).
/// Unidentified rows and columns are zero.
pub fn covariance<T: Scalar>(jacobian: &[[T; 3]], sigma2: T) -> Result<([[T; 3]; 3], Vec<Param>)> {
    let a = SymMatrix::gram(jacobian, 3);
    let live: Vec<usize> = (0..3).filter(|&k| a.get(k, k) > T::zero()).collect();
    let unidentified = (0..3)
        .filter(|k| !live.contains(k))
        .filter_map(Param::from_index)
        .collect();
    let inv = a.select(&live).inverse(T::tol(1e-10)).ok_or_else(|| {
        Error::Collinear(
            "JᵀJ is singular at the optimum; the paint and gasoline exposures are (nearly) collinear"
                .into(),
        )
    })?;
    let mut cov = [[T::zero(); 3]; 3];
    for (a_i, &i) in live.iter().enumerate() {
        for (b_j, &j) in live.iter().enumerate() {
            cov[i][j] = sigma2 * inv.get(a_i, b_j);
        }
    }
    Ok((cov, unidentified))
}

/// Assembles a [`FitResult`] at a given parameter value.
pub(crate) fn result_at<T: Scalar>(
    theta: Theta<T>,
    data: &[DesignPoint<T>],
    iterations: usize,
    converged: bool,
) -> Result<FitResult<T>> {
    let mut residuals = Vec::with_capacity(data.len());
    let mut jac = Vec::with_capacity(data.len());
    for p in data {
        let m = model::log_mean(&theta, p)?;
        residuals.push(p.log_concentration - m.mu_log);
        jac.push(m.gradient);
    }
    let rss: T = residuals.iter().map(|&e| e * e).sum();
    let n = data.len();
    let sigma2 = rss / T::from_usize_lossy(n);
    let (cov_theta, unidentified) = covariance(&jac, sigma2)?;
    let p = 3 - unidentified.len();
    let sigma2_df = rss / T::from_usize_lossy(n.saturating_sub(p).max(1));
    let active_bounds = Param::ALL
        .into_iter()
        .filter(|k| theta.get(*k) == T::zero() && !unidentified.contains(k))
        .collect();
    Ok(FitResult {
        theta,
        sigma2,
        sigma2_df,
        residuals,
        jacobian: jac,
        cov_theta,
        converged,
        iterations,
        active_bounds,
        unidentified,
        rss,
    })
}

/// Maximum-likelihood fit subject to `θ ≥ 0`.
pub fn fit<T: Scalar>(data: &[DesignPoint<T>], opts: &FitOptions<T>) -> Result<FitResult<T>> {
    check_design(data)?;
    let base = opts.start.unwrap_or_else(|| initial_theta(data)).to_array();
    let best = minimize_with_restarts(data, base, [None; 3], opts).ok_or_else(|| {
        Error::InvalidInput("no feasible starting point: linear predictor not positive".into())
    })?;
    if !best.converged {
        return Err(Error::NotConverged {
            iterations: best.iterations,
            objective: best.rss.to_f64_lossy(),
            best_theta: best.theta.map(|v| v.to_f64_lossy()),
        });
    }
    result_at(Theta::from_array(best.theta), data, best.iterations, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::linear_predictor;

    fn point(t: f64, g: f64, log_l: f64) -> DesignPoint<f64> {
        DesignPoint {
            paint_exposure: t,
            gas_exposure: g,
            log_concentration: log_l,
            year_built: 1950,
        }
    }

    fn exposures(i: usize) -> (f64, f64) {
        let x = i as f64 / 10.0;
        (5.0 * (-0.8 * x).exp(), 6.0 / (1.0 + (x - 2.0).powi(2)))
    }

    #[test]
    fn initial_theta_exact_linear() {
        let data: Vec<_> = (0..20)
            .map(|i| {
                let (t, g) = exposures(i);
                point(t, g, (10.0 + 5.0 * t + 2.0 * g).ln())
            })
            .collect();
        let th = initial_theta(&data);
        assert!((th.background - 10.0).abs() < 1e-8);
        assert!((th.paint_rate - 5.0).abs() < 1e-8);
        assert!((th.gas_rate - 2.0).abs() < 1e-8);
    }

    #[test]
    fn initial_theta_constant_response() {
        let data: Vec<_> = (0..20)
            .map(|i| {
                let (t, g) = exposures(i);
                point(t, g, 42f64.ln())
            })
            .collect();
        let th = initial_theta(&data);
        assert!((th.background - 42.0).abs() < 1e-8);
        assert!(th.paint_rate.abs() < 1e-8 && th.gas_rate.abs() < 1e-8);
    }

    #[test]
    fn initial_theta_all_clipped_falls_back() {
        // concentration decreasing in both exposures, intercept negative after fit
        let data: Vec<_> = (1..10)
            .map(|i| point(i as f64, i as f64 * 2.0 + 1.0, (1.0 / i as f64).ln()))
            .collect();
        let th = initial_theta(&data);
        assert!(th.is_feasible());
    }

    #[test]
    fn noiseless_boundary_recovery() {
        // G ≡ 0: the gasoline rate is pinned to the bound
        let truth = Theta::new(12.0, 80.0, 0.0);
        let data: Vec<_> = (0..30)
            .map(|i| {
                let (t, _) = exposures(i);
                point(t, 0.0, linear_predictor(&truth, t, 0.0).ln())
            })
            .collect();
        let fit = fit(&data, &FitOptions::default()).unwrap();
        assert!((fit.theta.background - 12.0).abs() < 1e-6);
        assert!((fit.theta.paint_rate - 80.0).abs() < 1e-6);
        assert_eq!(fit.theta.gas_rate, 0.0);
        assert_eq!(fit.unidentified, vec![Param::GasRate]);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn rejects_degenerate_designs() {
        let data: Vec<_> = (0..3).map(|i| point(i as f64, 1.0, 1.0)).collect();
        assert!(matches!(fit(&data, &FitOptions::default()), Err(Error::DegenerateDesign(_))));
        let data: Vec<_> = (0..10).map(|i| point(1.0, 2.0, i as f64)).collect();
        assert!(matches!(fit(&data, &FitOptions::default()), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn collinear_exposures_reported() {
        let data: Vec<_> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.2;
                let noise = ((i * 37) % 11) as f64 / 11.0 - 0.5;
                point(t, 3.0 * t, (10.0 + 20.0 * t).ln() + 0.3 * noise)
            })
            .collect();
        match fit(&data, &FitOptions::default()) {
            Err(Error::Collinear(msg)) => assert!(msg.contains("collinear")),
            other => panic!("expected collinearity error, got {other:?}"),
        }
    }

    #[test]
    fn non_convergence_carries_best_iterate() {
        let data: Vec<_> = (0..20)
            .map(|i| {
                let (t, g) = exposures(i);
                let noise = ((i * 37) % 11) as f64 / 11.0 - 0.5;
                point(t, g, (10.0 + 5.0 * t + 2.0 * g).ln() + noise)
            })
            .collect();
        let opts = FitOptions {
            max_iterations: 1,
            objective_tol: 0.0,
            step_tol: 0.0,
            start: Some(Theta::new(100.0, 0.1, 0.1)),
            restarts: false,
        };
        match fit(&data, &opts) {
            Err(Error::NotConverged { best_theta, .. }) => {
                assert!(best_theta.iter().all(|v| v.is_finite() && *v >= 0.0))
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
