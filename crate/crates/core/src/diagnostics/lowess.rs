//! Locally weighted linear regression (lowess) with tricube distance weights
//! and bisquare robustness iterations.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A smooth evaluated at some abscissae, with the sum of squared smoother
/// weights at each so that `σ·√Σl²` is a pointwise standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Smooth<T> {
    pub x: Vec<T>,
    pub fitted: Vec<T>,
    pub weight_ss: Vec<T>,
}

fn tricube<T: Scalar>(u: T) -> T {
    if u >= T::one() {
        T::zero()
    } else {
        let v = T::one() - u * u * u;
        v * v * v
    }
}

fn bisquare<T: Scalar>(u: T) -> T {
    if u.abs() >= T::one() {
        T::zero()
    } else {
        let v = T::one() - u * u;
        v * v
    }
}

fn neighbours(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 + 1e-7).floor() as usize).clamp(2, n)
}

/// Local linear fit at `x0`; returns the smoother weights `l_j` such that the
/// fitted value is `Σ l_j y_j`.
fn local_weights<T: Scalar>(x: &[T], robustness: &[T], x0: T, r: usize) -> Vec<T> {
    let n = x.len();
    let mut d: Vec<T> = x.iter().map(|&xi| (xi - x0).abs()).collect();
    let mut sorted = d.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite x"));
    let h = sorted[r - 1];
    let mut w: Vec<T> = if h > T::zero() {
        d.iter().zip(robustness).map(|(&di, &ri)| tricube(di / h) * ri).collect()
    } else {
        vec![T::zero(); n]
    };
    if w.iter().all(|&wi| wi == T::zero()) {
        // degenerate window (ties at x0 or all neighbours down-weighted):
        // equal weights on the r nearest points
        for di in d.iter_mut() {
            *di = if *di <= h { T::one() } else { T::zero() };
        }
        w = d;
    }
    let sw: T = w.iter().copied().sum();
    let xbar = w.iter().zip(x).map(|(&wi, &xi)| wi * xi).sum::<T>() / sw;
    let sxx: T = w.iter().zip(x).map(|(&wi, &xi)| wi * (xi - xbar) * (xi - xbar)).sum();
    let range = sorted[n - 1].max(T::tol(1e-300));
    let flat = sxx <= T::tol(1e-12) * sw * range * range;
    w.iter()
        .zip(x)
        .map(|(&wi, &xi)| {
            let base = wi / sw;
            if flat {
                base
            } else {
                base * (T::one() + (x0 - xbar) * (xi - xbar) * sw / sxx)
            }
        })
        .collect()
}

fn median<T: Scalar>(mut v: Vec<T>) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
    }
}

fn validate<T: Scalar>(x: &[T], y: &[T], fraction: f64) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("lowess: x and y lengths differ".into()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput("lowess needs at least 3 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("lowess: non-finite input".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("lowess fraction must be in (0, 1], got {fraction}")));
    }
    Ok(())
}

/// Robustness weights after `iterations` bisquare passes.
fn robustness_weights<T: Scalar>(x: &[T], y: &[T], r: usize, iterations: usize) -> Vec<T> {
    let n = x.len();
    let mut rw = vec![T::one(); n];
    for _ in 0..iterations {
        let fitted: Vec<T> = x
            .iter()
            .map(|&x0| local_weights(x, &rw, x0, r).iter().zip(y).map(|(&l, &yj)| l * yj).sum())
            .collect();
        let res: Vec<T> = y.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
        let s = median(res.iter().map(|e| e.abs()).collect());
        if s <= T::zero() {
            break;
        }
        let six_s = T::lit(6.0) * s;
        rw = res.iter().map(|&e| bisquare(e / six_s)).collect();
    }
    rw
}

/// Lowess smooth of `y` on `x`, evaluated at the data points.
pub fn lowess<T: Scalar>(x: &[T], y: &[T], fraction: f64, robust_iterations: usize) -> Result<Vec<T>> {
    Ok(lowess_at(x, y, x, fraction, robust_iterations)?.fitted)
}

/// Lowess smooth of `y` on `x`, evaluated at arbitrary points `at`.
pub fn lowess_at<T: Scalar>(
    x: &[T],
    y: &[T],
    at: &[T],
    fraction: f64,
    robust_iterations: usize,
) -> Result<Smooth<T>> {
    validate(x, y, fraction)?;
    let r = neighbours(x.len(), fraction);
    let rw = robustness_weights(x, y, r, robust_iterations);
    let mut fitted = Vec::with_capacity(at.len());
    let mut weight_ss = Vec::with_capacity(at.len());
    for &x0 in at {
        let l = local_weights(x, &rw, x0, r);
        fitted.push(l.iter().zip(y).map(|(&li, &yi)| li * yi).sum());
        weight_ss.push(l.iter().map(|&li| li * li).sum());
    }
    Ok(Smooth {
        x: at.to_vec(),
        fitted,
        weight_ss,
    })
}
