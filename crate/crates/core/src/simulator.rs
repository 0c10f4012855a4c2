//! Synthetic data under the base model and its measurement-error extension.
//!
//! With an [`ErrorConfig`] present, each sample's exposures are multiplied
//! by random weights
//!
//! ```text
//! Δ_y = Σ_{i=y}^{Y} w_i ϵ_i δ_ij / Σ_{i=y}^{Y} w_i
//! ```
//!
//! where `ϵ_i` is a per-year error in the consumption series (optionally
//! shared by every structure) and `δ_ij` a per-structure yearly loss
//! multiplier. Both are lognormal, parameterized by mean and SD.
//!
//! Randomness is counter based: sample `j` draws from ChaCha stream `j + 1`
//! of the master seed, shared series errors from stream 0. Output is
//! therefore identical for any degree of parallelism.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample, SiteType};
use crate::error::{Error, Result};
use crate::model::{linear_predictor, DesignPoint, Theta};
use crate::scalar::Scalar;
use crate::series::{cumulate, CumulativeExposure, YearlySeries};

/// Distribution of year built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YearDistribution {
    /// Equal weight on every exposure year.
    Uniform,
    /// Four times the weight on years before 1930 (old inner-city stock).
    MnLike,
    /// Four times the weight on years from 1930 on.
    UsLike,
    Custom { weights: Vec<(i32, f64)> },
}

impl YearDistribution {
    /// `(year, weight)` pairs restricted to `[lo, hi]`.
    pub fn weights(&self, lo: i32, hi: i32) -> Vec<(i32, f64)> {
        let split = |before: f64, after: f64| {
            (lo..=hi)
                .map(|y| (y, if y < 1930 { before } else { after }))
                .collect()
        };
        match self {
            YearDistribution::Uniform => (lo..=hi).map(|y| (y, 1.0)).collect(),
            YearDistribution::MnLike => split(4.0, 1.0),
            YearDistribution::UsLike => split(1.0, 4.0),
            YearDistribution::Custom { weights } => weights
                .iter()
                .copied()
                .filter(|(y, _)| (lo..=hi).contains(y))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig<T> {
    pub theta: Theta<T>,
    /// Log-scale noise SD.
    pub sigma: T,
    pub paint: CumulativeExposure<T>,
    pub gas: CumulativeExposure<T>,
    pub years: YearDistribution,
    pub n: usize,
    pub seed: u64,
    pub site_type: SiteType,
}

/// Measurement-error extension. Defaults: `E(ϵ) = 1`, no spread, unshared,
/// no per-structure loss variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorConfig {
    pub epsilon_mean: f64,
    pub epsilon_sd: f64,
    pub shared: bool,
    pub delta_sd: f64,
}

impl Default for ErrorConfig {
    fn default() -> Self {
        Self {
            epsilon_mean: 1.0,
            epsilon_sd: 0.0,
            shared: false,
            delta_sd: 0.0,
        }
    }
}

impl ErrorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_mean > 0.0) || !self.epsilon_mean.is_finite() {
            return Err(Error::InvalidInput("epsilon_mean must be positive".into()));
        }
        if !(self.epsilon_sd >= 0.0) || !(self.delta_sd >= 0.0) {
            return Err(Error::InvalidInput("error SDs must be nonnegative".into()));
        }
        Ok(())
    }

    /// Variance of one product `ϵ_i δ_ij`; equals `σ_ϵ²` when `δ` is off.
    pub fn product_variance(&self) -> f64 {
        let m = self.epsilon_mean;
        let e2 = self.epsilon_sd.powi(2) + m * m;
        e2 * (1.0 + self.delta_sd.powi(2)) - m * m
    }
}

/// A positive random variable with given mean and SD: lognormal, or the
/// constant `mean` when `sd = 0`.
#[derive(Debug, Clone, Copy)]
enum Positive {
    Const(f64),
    LogNormal(LogNormal<f64>),
}

impl Positive {
    fn new(mean: f64, sd: f64) -> Self {
        if sd == 0.0 {
            return Positive::Const(mean);
        }
        let s2 = (1.0 + (sd / mean).powi(2)).ln();
        let mu = mean.ln() - s2 / 2.0;
        Positive::LogNormal(LogNormal::new(mu, s2.sqrt()).expect("valid lognormal"))
    }

    #[inline]
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Positive::Const(c) => *c,
            Positive::LogNormal(d) => d.sample(rng),
        }
    }
}

/// One realization of `Δ` over `window` (the amounts `w_y..w_Y`), with the
/// per-year errors `eps` (same length) already drawn.
fn delta_given_eps<R: Rng + ?Sized>(window: &[f64], eps: &[f64], delta: &Positive, rng: &mut R) -> f64 {
    let total: f64 = window.iter().sum();
    if total <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for (w, e) in window.iter().zip(eps) {
        s += w * e * delta.draw(rng);
    }
    s / total
}

fn draw_eps<R: Rng + ?Sized>(len: usize, eps: &Positive, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| eps.draw(rng)).collect()
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn amounts_f64<T: Scalar>(c: &CumulativeExposure<T>) -> Vec<f64> {
    c.amounts().into_iter().map(|(_, v)| v.to_f64_lossy()).collect()
}

/// Draws a dataset. Deterministic in `sim.seed`.
pub fn simulate<T: Scalar>(sim: &SimConfig<T>, err: Option<&ErrorConfig>) -> Result<Dataset<T>> {
    if !(sim.sigma >= T::zero()) {
        return Err(Error::InvalidInput("sigma must be nonnegative".into()));
    }
    if !sim.theta.is_feasible() {
        return Err(Error::InvalidInput("theta must be nonnegative".into()));
    }
    if let Some(e) = err {
        e.validate()?;
    }
    let lo = sim.paint.y_min().max(sim.gas.y_min());
    let hi = sim.paint.measurement_year().min(sim.gas.measurement_year());
    let weights = sim.years.weights(lo, hi);
    let index = WeightedIndex::new(weights.iter().map(|w| w.1))
        .map_err(|e| Error::InvalidInput(format!("degenerate year distribution: {e}")))?;

    let w_paint = amounts_f64(&sim.paint);
    let w_gas = amounts_f64(&sim.gas);
    let dists = err.map(|e| (Positive::new(e.epsilon_mean, e.epsilon_sd), Positive::new(1.0, e.delta_sd)));
    let shared_eps = match (err, &dists) {
        (Some(e), Some((eps, _))) if e.shared => {
            let mut rng = stream(sim.seed, 0);
            Some((draw_eps(w_paint.len(), eps, &mut rng), draw_eps(w_gas.len(), eps, &mut rng)))
        }
        _ => None,
    };
    let sigma = sim.sigma.to_f64_lossy();

    let samples = (0..sim.n)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(sim.seed, j as u64 + 1);
            let year = weights[index.sample(&mut rng)].0;
            let t = sim.paint.get(year).expect("year in paint domain");
            let g = sim.gas.get(year).expect("year in gas domain");
            let (dp, dg) = match &dists {
                None => (1.0, 1.0),
                Some((eps, delta)) => {
                    let kp = (year - sim.paint.y_min()) as usize;
                    let kg = (year - sim.gas.y_min()) as usize;
                    let (ep, eg) = match &shared_eps {
                        Some((ep, eg)) => (ep[kp..].to_vec(), eg[kg..].to_vec()),
                        None => (
                            draw_eps(w_paint.len() - kp, eps, &mut rng),
                            draw_eps(w_gas.len() - kg, eps, &mut rng),
                        ),
                    };
                    (
                        delta_given_eps(&w_paint[kp..], &ep, delta, &mut rng),
                        delta_given_eps(&w_gas[kg..], &eg, delta, &mut rng),
                    )
                }
            };
            let eta = linear_predictor(&sim.theta, t * T::lit(dp), g * T::lit(dg));
            if !(eta > T::zero()) {
                return Err(Error::NonPositivePredictor { eta: eta.to_f64_lossy() });
            }
            let z: f64 = rng.sample(StandardNormal);
            Ok(Sample {
                id: format!("sim{j:05}"),
                site_type: sim.site_type,
                point: DesignPoint {
                    paint_exposure: t,
                    gas_exposure: g,
                    log_concentration: eta.ln() + T::lit(sigma * z),
                    year_built: year,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples })
}

/// Analytic moments of `Δ_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaMoments {
    pub mean: f64,
    pub variance: f64,
    /// Coefficient of variation of the window `w_y..w_Y` (population
    /// divisor; 0 for a single year).
    pub cv: f64,
    /// Window length `A_y = Y − y + 1`.
    pub window: usize,
}

fn window<T: Scalar>(series: &YearlySeries<T>, y: i32, measurement_year: i32) -> Result<Vec<f64>> {
    if y > measurement_year {
        return Err(Error::InvalidInput(format!("year {y} after measurement year {measurement_year}")));
    }
    (y..=measurement_year)
        .map(|i| {
            series
                .amount(i)
                .map(|v| v.to_f64_lossy())
                .ok_or_else(|| Error::MissingYear { year: i, context: "Δ window".into() })
        })
        .collect()
}

/// `E(Δ_y) = E(ϵ)` and `Var(Δ_y) = (c_y² + 1)·v/A_y`, with `v` the variance
/// of `ϵδ` (which is `σ_ϵ²` when `δ` is off).
///
/// With the population divisor for `c_y` this is exact:
/// `(c² + 1)/A = Σw²/(Σw)²`.
pub fn delta_moments<T: Scalar>(
    series: &YearlySeries<T>,
    y: i32,
    measurement_year: i32,
    err: &ErrorConfig,
) -> Result<DeltaMoments> {
    err.validate()?;
    let w = window(series, y, measurement_year)?;
    let a = w.len() as f64;
    let sum: f64 = w.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidInput(format!("Σw is zero on [{y}, {measurement_year}]")));
    }
    let mean_w = sum / a;
    let var_w = w.iter().map(|x| (x - mean_w).powi(2)).sum::<f64>() / a;
    let cv = var_w.sqrt() / mean_w;
    Ok(DeltaMoments {
        mean: err.epsilon_mean,
        variance: (cv * cv + 1.0) * err.product_variance() / a,
        cv,
        window: w.len(),
    })
}

/// Covariance of `Δ_{y'}` and `Δ_y` (`y' ≤ y`) for two structures sharing the
/// series errors: `Var(Δ_y)·Σ_{i≥y} w_i / Σ_{i≥y'} w_i`.
///
/// Only `ϵ` is shared, so with `δ` on the variance factor is `σ_ϵ²` rather
/// than the variance of `ϵδ`; for `y' = y` this is the covariance of two
/// distinct structures built in the same year.
pub fn delta_covariance<T: Scalar>(
    series: &YearlySeries<T>,
    y_prime: i32,
    y: i32,
    measurement_year: i32,
    err: &ErrorConfig,
) -> Result<f64> {
    if !err.shared {
        return Err(Error::InvalidInput("Δ covariance requires shared errors".into()));
    }
    if y_prime > y {
        return Err(Error::InvalidInput(format!("need y' ≤ y, got {y_prime} > {y}")));
    }
    let shared_only = ErrorConfig { delta_sd: 0.0, ..*err };
    let var_y = delta_moments(series, y, measurement_year, &shared_only)?.variance;
    let s_y: f64 = window(series, y, measurement_year)?.iter().sum();
    let s_yp: f64 = window(series, y_prime, measurement_year)?.iter().sum();
    Ok(var_y * s_y / s_yp)
}

/// Monte Carlo draws of `(Δ_{y'}, Δ_y)` for two distinct structures.
///
/// The series errors are common to both members of a pair when
/// `err.shared`, independent otherwise. Draw `k` uses stream `k` of `seed`.
pub fn sample_delta_pairs<T: Scalar>(
    series: &YearlySeries<T>,
    y_prime: i32,
    y: i32,
    measurement_year: i32,
    err: &ErrorConfig,
    draws: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    err.validate()?;
    let lo = y_prime.min(y);
    let w = window(series, lo, measurement_year)?;
    let (kp, ky) = ((y_prime - lo) as usize, (y - lo) as usize);
    let eps = Positive::new(err.epsilon_mean, err.epsilon_sd);
    let delta = Positive::new(1.0, err.delta_sd);
    Ok((0..draws)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            let e1 = draw_eps(w.len(), &eps, &mut rng);
            let e2 = if err.shared { e1.clone() } else { draw_eps(w.len(), &eps, &mut rng) };
            let a = delta_given_eps(&w[kp..], &e1[kp..], &delta, &mut rng);
            let b = delta_given_eps(&w[ky..], &e2[ky..], &delta, &mut rng);
            (a, b)
        })
        .collect())
}

/// Synthetic consumption series and presets used by the test suites and the
/// `simulate` subcommand. Shapes follow the historical record qualitatively:
/// paint pigment rising to a 1920s plateau then declining to zero by 1980,
/// gasoline lead starting in 1924 and peaking around 1970.
pub mod presets {
    use super::*;

    pub const FIRST_YEAR: i32 = 1902;
    pub const MEASUREMENT_YEAR: i32 = 1986;

    /// White-lead pigment consumption (Mt), 1902–1986.
    pub fn paint_series<T: Scalar>() -> YearlySeries<T> {
        let amounts: Vec<T> = (FIRST_YEAR..=MEASUREMENT_YEAR)
            .map(|i| {
                let x = i as f64;
                let w = if i <= 1922 {
                    0.10 + 0.0025 * (x - 1902.0)
                } else if i <= 1929 {
                    0.15
                } else if i <= 1945 {
                    0.12 - 0.09 * (x - 1930.0) / 15.0
                } else if i <= 1951 {
                    0.025 - 0.013 * (x - 1946.0) / 5.0
                } else if i <= 1979 {
                    0.0135 - 0.0121 * (x - 1952.0) / 27.0
                } else {
                    0.0
                };
                T::lit(w)
            })
            .collect();
        YearlySeries::from_amounts(FIRST_YEAR, &amounts).expect("valid preset")
    }

    /// Gasoline lead consumption (Mt), 1902–1986.
    pub fn gas_series<T: Scalar>() -> YearlySeries<T> {
        let amounts: Vec<T> = (FIRST_YEAR..=MEASUREMENT_YEAR)
            .map(|i| {
                let x = i as f64;
                let u = if i <= 1923 {
                    0.0
                } else if i <= 1940 {
                    0.01 + 0.05 * (x - 1924.0) / 16.0
                } else if i <= 1945 {
                    0.045
                } else if i <= 1970 {
                    0.07 + 0.11 * (x - 1946.0) / 24.0
                } else {
                    0.18 - 0.17 * (x - 1971.0) / 15.0
                };
                T::lit(u)
            })
            .collect();
        YearlySeries::from_amounts(FIRST_YEAR, &amounts).expect("valid preset")
    }

    /// Cumulative paint and gas exposures over 1902–1986.
    pub fn exposures<T: Scalar>() -> (CumulativeExposure<T>, CumulativeExposure<T>) {
        (
            cumulate(&paint_series(), MEASUREMENT_YEAR, FIRST_YEAR).expect("preset"),
            cumulate(&gas_series(), MEASUREMENT_YEAR, FIRST_YEAR).expect("preset"),
        )
    }

    /// The parameter-recovery configuration: θ = (15, 200, 10), σ = 1,
    /// n = 300, uniform year built.
    pub fn recovery<T: Scalar>(seed: u64) -> SimConfig<T> {
        let (paint, gas) = exposures();
        SimConfig {
            theta: Theta::new(T::lit(15.0), T::lit(200.0), T::lit(10.0)),
            sigma: T::one(),
            paint,
            gas,
            years: YearDistribution::Uniform,
            n: 300,
            seed,
            site_type: SiteType::Foundation,
        }
    }
}
