use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimator::{minimize_with_restarts, FitOptions, FitResult};
use crate::model::{DesignPoint, Param};
use crate::scalar::Scalar;

/// A likelihood that can be maximized with one coordinate held fixed.
///
/// Implemented for the log-sum model by [`TbsProfile`]; the interval search
/// is written against this trait so it can be checked on problems whose
/// profile is known in closed form.
pub trait ProfileProblem<T: Scalar>: Sync {
    fn estimate(&self, k: usize) -> T;
    fn max_log_likelihood(&self) -> T;
    /// Maximum of the log-likelihood over the other coordinates with
    /// coordinate `k` fixed at `value`; `-∞` where the model is undefined.
    fn profile_log_likelihood(&self, k: usize, value: T) -> T;
    /// A typical scale for coordinate `k`, e.g. its standard error.
    fn step_hint(&self, k: usize) -> T;
}

/// How `σ²` enters the profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode<T> {
    /// Maximized out as `RSS / n` (the default).
    Profiled,
    /// Held at a known value.
    Fixed(T),
}

/// Profile likelihood of the log-sum model.
pub struct TbsProfile<'a, T> {
    pub fit: &'a FitResult<T>,
    pub data: &'a [DesignPoint<T>],
    pub sigma: SigmaMode<T>,
    pub options: FitOptions<T>,
}

impl<'a, T: Scalar> TbsProfile<'a, T> {
    pub fn new(fit: &'a FitResult<T>, data: &'a [DesignPoint<T>]) -> Self {
        Self {
            fit,
            data,
            sigma: SigmaMode::Profiled,
            options: FitOptions::default(),
        }
    }

    fn loglik_from_rss(&self, rss: T) -> T {
        let n = self.data.len();
        match self.sigma {
            SigmaMode::Profiled => crate::model::profiled_log_likelihood(rss, n),
            SigmaMode::Fixed(s2) => {
                let nn = T::from_usize_lossy(n);
                let two_pi = T::lit(std::f64::consts::TAU);
                -nn / T::lit(2.0) * (two_pi * s2).ln() - rss / (T::lit(2.0) * s2)
            }
        }
    }
}

impl<T: Scalar> ProfileProblem<T> for TbsProfile<'_, T> {
    fn estimate(&self, k: usize) -> T {
        self.fit.theta.to_array()[k]
    }

    fn max_log_likelihood(&self) -> T {
        self.loglik_from_rss(self.fit.rss)
    }

    fn profile_log_likelihood(&self, k: usize, value: T) -> T {
        let mut fixed = [None; 3];
        fixed[k] = Some(value);
        let mut start = self.fit.theta.to_array();
        start[k] = value;
        match minimize_with_restarts(self.data, start, fixed, &self.options) {
            Some(m) => self.loglik_from_rss(m.rss),
            None => T::neg_infinity(),
        }
    }

    fn step_hint(&self, k: usize) -> T {
        let se = self.fit.cov_theta[k][k].max(T::zero()).sqrt();
        let est = self.estimate(k).abs();
        if se > T::zero() && se.is_finite() {
            se
        } else if est > T::zero() {
            est * T::lit(0.1)
        } else {
            T::one()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileOptions {
    pub level: f64,
    /// Bisection stops when the bracket is narrower than this fraction of
    /// the endpoint.
    pub rel_tol: f64,
    /// The upper endpoint is searched up to `cap_factor × estimate` (or
    /// `× step hint` when the estimate is 0); beyond that it is reported open.
    pub cap_factor: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            rel_tol: 1e-6,
            cap_factor: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint<T> {
    pub value: T,
    pub profile_loglik: T,
    /// `sign(value − estimate)·√(2[ℓ_max − ℓ_profile])`.
    pub signed_root: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileInterval<T> {
    pub parameter: Param,
    pub level: f64,
    pub estimate: T,
    pub lower: T,
    /// `true` when the likelihood never falls below the cutoff on
    /// `[0, estimate]`, so the lower endpoint is the bound 0.
    pub lower_at_bound: bool,
    /// `None` when no endpoint was found below the search cap.
    pub upper: Option<T>,
    pub cap: T,
    /// Deviance cutoff, the `level` quantile of χ²₁.
    pub cutoff: T,
    pub max_log_likelihood: T,
    /// Every profile evaluation made, sorted by value.
    pub trace: Vec<TracePoint<T>>,
}

struct Evaluator<'p, T: Scalar, P: ?Sized> {
    problem: &'p P,
    k: usize,
    estimate: T,
    lmax: T,
    trace: Vec<TracePoint<T>>,
}

impl<T: Scalar, P: ProfileProblem<T> + ?Sized> Evaluator<'_, T, P> {
    fn point(&self, value: T) -> TracePoint<T> {
        // optimizer noise can put ℓ_profile a hair above ℓ_max
        let l = self.problem.profile_log_likelihood(self.k, value).min(self.lmax);
        let dev = T::lit(2.0) * (self.lmax - l);
        let root = dev.sqrt();
        TracePoint {
            value,
            profile_loglik: l,
            signed_root: if value < self.estimate { -root } else { root },
        }
    }

    fn deviance(&mut self, value: T) -> T {
        let p = self.point(value);
        self.trace.push(p);
        p.signed_root * p.signed_root
    }

    /// Bisects `[inside, outside]` for the cutoff crossing.
    fn bisect(&mut self, mut inside: T, mut outside: T, cutoff: T, rel_tol: T) -> T {
        let tiny = T::tol(1e-300);
        for _ in 0..200 {
            let width = (outside - inside).abs();
            let scale = inside.abs().max(outside.abs()).max(tiny);
            if width <= rel_tol * scale {
                break;
            }
            let mid = (inside + outside) / T::lit(2.0);
            if self.deviance(mid) <= cutoff {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        (inside + outside) / T::lit(2.0)
    }
}

/// 95% (or `level`) profile-likelihood interval for parameter `param`.
pub fn profile_interval<T: Scalar>(
    fit: &FitResult<T>,
    data: &[DesignPoint<T>],
    param: Param,
    level: f64,
) -> Result<ProfileInterval<T>> {
    if !fit.converged {
        return Err(Error::InvalidInput("profile needs a converged fit".into()));
    }
    if fit.unidentified.contains(&param) {
        return Err(Error::InvalidInput(format!(
            "{} is not identified by these data",
            param.name()
        )));
    }
    let opts = ProfileOptions { level, ..Default::default() };
    profile_interval_with(&TbsProfile::new(fit, data), param, &opts)
}

/// Profile interval on an arbitrary [`ProfileProblem`].
pub fn profile_interval_with<T: Scalar, P: ProfileProblem<T> + ?Sized>(
    problem: &P,
    param: Param,
    opts: &ProfileOptions,
) -> Result<ProfileInterval<T>> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::InvalidInput(format!("level must be in (0, 1), got {}", opts.level)));
    }
    let k = param.index();
    let cutoff = T::lit(ChiSquared::new(1.0).expect("df 1").inverse_cdf(opts.level));
    let rel_tol = T::tol(opts.rel_tol);
    let estimate = problem.estimate(k);
    let lmax = problem.max_log_likelihood();
    let mut ev = Evaluator {
        problem,
        k,
        estimate,
        lmax,
        trace: Vec::new(),
    };
    ev.deviance(estimate);

    // lower side: the bound 0 closes the search interval
    let (lower, lower_at_bound) = if estimate <= T::zero() || ev.deviance(T::zero()) <= cutoff {
        (T::zero(), true)
    } else {
        (ev.bisect(estimate, T::zero(), cutoff, rel_tol), false)
    };

    // upper side: expand geometrically until the cutoff is crossed or the cap
    let hint = problem.step_hint(k);
    let cap = T::lit(opts.cap_factor) * if estimate > T::zero() { estimate } else { hint };
    let mut inside = estimate;
    let mut step = hint;
    let mut upper = None;
    loop {
        let trial = (inside + step).min(cap);
        if ev.deviance(trial) > cutoff {
            upper = Some(ev.bisect(inside, trial, cutoff, rel_tol));
            break;
        }
        inside = trial;
        if trial >= cap {
            break;
        }
        step = step * T::lit(2.0);
    }

    // record the endpoints themselves so the trace reproduces the interval
    if !lower_at_bound {
        ev.deviance(lower);
    }
    if let Some(u) = upper {
        ev.deviance(u);
    }
    let mut trace = ev.trace;
    trace.sort_by(|a, b| a.value.partial_cmp(&b.value).expect("finite profile values"));
    trace.dedup_by(|a, b| a.value == b.value);
    Ok(ProfileInterval {
        parameter: param,
        level: opts.level,
        estimate,
        lower,
        lower_at_bound,
        upper,
        cap,
        cutoff,
        max_log_likelihood: lmax,
        trace,
    })
}

/// Profile evaluated on a caller-supplied grid (for confidence-curve plots).
/// Grid points are evaluated in parallel; output follows grid order.
pub fn confidence_curve_trace<T: Scalar, P: ProfileProblem<T> + ?Sized>(
    problem: &P,
    param: Param,
    grid: &[T],
) -> Vec<TracePoint<T>> {
    let k = param.index();
    let ev = Evaluator {
        problem,
        k,
        estimate: problem.estimate(k),
        lmax: problem.max_log_likelihood(),
        trace: Vec::new(),
    };
    grid.par_iter().map(|&v| ev.point(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gaussian linear model with known σ: the log-likelihood is exactly
    /// `-½ (β − b)ᵀ A (β − b)` and the profile in `β_k` is
    /// `-½ (β_k − b_k)² / (A⁻¹)_kk`.
    struct Quadratic {
        b: [f64; 3],
        a_inv_diag: [f64; 3],
    }

    impl ProfileProblem<f64> for Quadratic {
        fn estimate(&self, k: usize) -> f64 {
            self.b[k]
        }
        fn max_log_likelihood(&self) -> f64 {
            -3.0
        }
        fn profile_log_likelihood(&self, k: usize, v: f64) -> f64 {
            -3.0 - 0.5 * (v - self.b[k]).powi(2) / self.a_inv_diag[k]
        }
        fn step_hint(&self, k: usize) -> f64 {
            self.a_inv_diag[k].sqrt()
        }
    }

    #[test]
    fn quadratic_profile_matches_wald() {
        let q = Quadratic {
            b: [20.0, 150.0, 8.0],
            a_inv_diag: [4.0, 900.0, 1.0],
        };
        let z = 1.959_963_984_540_054;
        for (k, p) in Param::ALL.into_iter().enumerate() {
            let iv = profile_interval_with(&q, p, &ProfileOptions::default()).unwrap();
            let se = q.a_inv_diag[k].sqrt();
            let lo = q.b[k] - z * se;
            let hi = q.b[k] + z * se;
            assert!(((iv.lower - lo) / lo).abs() < 1e-5, "{} vs {lo}", iv.lower);
            assert!(((iv.upper.unwrap() - hi) / hi).abs() < 1e-5);
            assert!(!iv.lower_at_bound);
        }
        // signed root is linear in the value
        let grid: Vec<f64> = (0..11).map(|i| 14.0 + i as f64).collect();
        let tr = confidence_curve_trace(&q, Param::Background, &grid);
        for t in &tr {
            assert!((t.signed_root - (t.value - 20.0) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_clamped_and_upper_open() {
        let near_zero = Quadratic {
            b: [1.0, 1.0, 1.0],
            a_inv_diag: [1.0, 1.0, 1.0],
        };
        let iv = profile_interval_with(&near_zero, Param::Background, &ProfileOptions::default()).unwrap();
        assert_eq!(iv.lower, 0.0);
        assert!(iv.lower_at_bound);
        let opts = ProfileOptions { cap_factor: 2.0, ..Default::default() };
        let iv = profile_interval_with(&near_zero, Param::Background, &opts).unwrap();
        assert_eq!(iv.upper, None);
        assert_eq!(iv.cap, 2.0);
    }
}
