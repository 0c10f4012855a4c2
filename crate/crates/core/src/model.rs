//! The transform-both-sides log-sum mean function
//!
//! ```text
//! log L = log(θ0 + θ1·T + θ2·G) + ε,   ε ~ N(0, σ²)
//! ```
//!
//! with `T` the cumulative paint exposure, `G` the cumulative gasoline
//! exposure, `θ0` the background concentration and `θ1`, `θ2` rates in ppm
//! per million metric tons of cumulative exposure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Model parameters in ppm (rates per Mt of cumulative exposure).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Theta<T> {
    pub background: T,
    pub paint_rate: T,
    pub gas_rate: T,
}

/// Index of a parameter within [`Theta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Background,
    PaintRate,
    GasRate,
}

impl Param {
    pub const ALL: [Param; 3] = [Param::Background, Param::PaintRate, Param::GasRate];

    pub fn index(self) -> usize {
        match self {
            Param::Background => 0,
            Param::PaintRate => 1,
            Param::GasRate => 2,
        }
    }

    pub fn from_index(k: usize) -> Option<Self> {
        Self::ALL.get(k).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Background => "background",
            Param::PaintRate => "paint_rate",
            Param::GasRate => "gas_rate",
        }
    }
}

impl std::str::FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background" | "theta0" | "0" => Ok(Param::Background),
            "paint_rate" | "paint" | "theta1" | "1" => Ok(Param::PaintRate),
            "gas_rate" | "gas" | "theta2" | "2" => Ok(Param::GasRate),
            other => Err(Error::InvalidInput(format!("unknown parameter '{other}'"))),
        }
    }
}

impl<T: Scalar> Theta<T> {
    pub fn new(background: T, paint_rate: T, gas_rate: T) -> Self {
        Self {
            background,
            paint_rate,
            gas_rate,
        }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.background, self.paint_rate, self.gas_rate]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn get(&self, p: Param) -> T {
        self.to_array()[p.index()]
    }

    pub fn is_feasible(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= T::zero())
    }
}

/// One sample on the model's scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint<T> {
    /// Cumulative paint exposure `T_y` (Mt).
    pub paint_exposure: T,
    /// Cumulative gasoline exposure `G_y` (Mt).
    pub gas_exposure: T,
    /// Observed `log L` with `L` in ppm.
    pub log_concentration: T,
    pub year_built: i32,
}

impl<T: Scalar> DesignPoint<T> {
    /// Builds a point from a raw concentration, which must be strictly positive.
    pub fn from_concentration(
        paint_exposure: T,
        gas_exposure: T,
        concentration: T,
        year_built: i32,
    ) -> Result<Self> {
        if !(concentration > T::zero()) || !concentration.is_finite() {
            return Err(Error::InvalidInput(format!(
                "concentration must be positive, got {concentration}"
            )));
        }
        if !(paint_exposure >= T::zero()) || !(gas_exposure >= T::zero()) {
            return Err(Error::InvalidInput("exposures must be nonnegative".into()));
        }
        Ok(Self {
            paint_exposure,
            gas_exposure,
            log_concentration: concentration.ln(),
            year_built,
        })
    }

    /// Regressor row `(1, T, G)`.
    #[inline]
    pub fn regressors(&self) -> [T; 3] {
        [T::one(), self.paint_exposure, self.gas_exposure]
    }
}

/// Linear predictor, its log, and the gradient of the log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelEval<T> {
    pub eta: T,
    pub mu_log: T,
    pub gradient: [T; 3],
}

/// `θ0 + θ1·T + θ2·G` in ppm.
#[inline]
pub fn linear_predictor<T: Scalar>(theta: &Theta<T>, paint_exposure: T, gas_exposure: T) -> T {
    theta.background + theta.paint_rate * paint_exposure + theta.gas_rate * gas_exposure
}

#[inline]
pub fn point_predictor<T: Scalar>(theta: &Theta<T>, point: &DesignPoint<T>) -> T {
    linear_predictor(theta, point.paint_exposure, point.gas_exposure)
}

/// `log η` and `∂ log η / ∂θ = (1, T, G) / η`.
pub fn log_mean<T: Scalar>(theta: &Theta<T>, point: &DesignPoint<T>) -> Result<ModelEval<T>> {
    let eta = point_predictor(theta, point);
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(Error::NonPositivePredictor {
            eta: eta.to_f64_lossy(),
        });
    }
    let x = point.regressors();
    Ok(ModelEval {
        eta,
        mu_log: eta.ln(),
        gradient: [x[0] / eta, x[1] / eta, x[2] / eta],
    })
}

/// Expected concentration on the ppm scale, `η · exp(σ²/2)`.
pub fn fitted_mean<T: Scalar>(theta: &Theta<T>, sigma2: T, point: &DesignPoint<T>) -> T {
    point_predictor(theta, point) * (sigma2 / T::lit(2.0)).exp()
}

/// Residual sum of squares on the log scale.
pub fn rss<T: Scalar>(theta: &Theta<T>, data: &[DesignPoint<T>]) -> Result<T> {
    let mut s = T::zero();
    for p in data {
        let e = p.log_concentration - log_mean(theta, p)?.mu_log;
        s = s + e * e;
    }
    Ok(s)
}

/// Gaussian log-likelihood of the log concentrations.
pub fn log_likelihood<T: Scalar>(theta: &Theta<T>, sigma2: T, data: &[DesignPoint<T>]) -> Result<T> {
    if !(sigma2 > T::zero()) {
        return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
    }
    let n = T::from_usize_lossy(data.len());
    let two_pi = T::lit(std::f64::consts::TAU);
    let half = T::lit(0.5);
    Ok(-half * n * (two_pi * sigma2).ln() - rss(theta, data)? / (T::lit(2.0) * sigma2))
}

/// Log-likelihood with `σ²` replaced by its maximizer `RSS / n`.
pub fn profiled_log_likelihood<T: Scalar>(rss: T, n: usize) -> T {
    let n = T::from_usize_lossy(n);
    let two_pi = T::lit(std::f64::consts::TAU);
    -(n / T::lit(2.0)) * ((two_pi * rss / n).ln() + T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(t: f64, g: f64, logl: f64) -> DesignPoint<f64> {
        DesignPoint {
            paint_exposure: t,
            gas_exposure: g,
            log_concentration: logl,
            year_built: 1950,
        }
    }

    const MN_FOUNDATION: Theta<f64> = Theta {
        background: 15.03,
        paint_rate: 200.64,
        gas_rate: 9.93,
    };

    #[test]
    fn linear_predictor_values() {
        let eta = linear_predictor(&MN_FOUNDATION, 0.2090, 4.223);
        // 15.03 / 0.152 = 98.88 is the implied total
        assert!((15.03f64 / 0.152 - 98.9).abs() < 0.05);
        assert!((eta - 98.9).abs() < 0.05, "{eta}");
        assert_eq!(linear_predictor(&Theta::new(0.0, 0.0, 0.0), 3.0, 4.0), 0.0);
        assert_eq!(linear_predictor(&Theta::new(1.0, 1.0, 1.0), 1.0, 2.0), 4.0);
    }

    #[test]
    fn log_mean_closed_forms() {
        let e = std::f64::consts::E;
        let p = pt(0.7, 3.0, 0.0);
        let m = log_mean(&Theta::new(e, 0.0, 0.0), &p).unwrap();
        assert!((m.mu_log - 1.0).abs() < 1e-15);
        assert!((m.gradient[0] - 1.0 / e).abs() < 1e-15);
        assert!((m.gradient[1] - 0.7 / e).abs() < 1e-15);
        assert!((m.gradient[2] - 3.0 / e).abs() < 1e-15);

        let m = log_mean(&MN_FOUNDATION, &pt(0.2090, 4.223, 0.0)).unwrap();
        assert!((m.mu_log - 98.9f64.ln()).abs() < 1e-3);
        assert!((m.mu_log - 4.594).abs() < 1e-3);
    }

    #[test]
    fn log_mean_rejects_nonpositive() {
        assert!(matches!(
            log_mean(&Theta::new(0.0, 0.0, 0.0), &pt(1.0, 1.0, 0.0)),
            Err(Error::NonPositivePredictor { .. })
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let theta = [
                rng.random_range(0.1..50.0),
                rng.random_range(0.0..300.0),
                rng.random_range(0.0..30.0),
            ];
            let p = pt(rng.random_range(0.0..6.0), rng.random_range(0.0..8.0), 0.0);
            let m = log_mean(&Theta::from_array(theta), &p).unwrap();
            for k in 0..3 {
                let h = 1e-6 * theta[k].abs().max(1.0);
                let mut up = theta;
                let mut dn = theta;
                up[k] += h;
                dn[k] -= h;
                let f = |a: [f64; 3]| {
                    linear_predictor(&Theta::from_array(a), p.paint_exposure, p.gas_exposure).ln()
                };
                let fd = (f(up) - f(dn)) / (2.0 * h);
                let scale = m.gradient[k].abs().max(1e-12);
                assert!(
                    (fd - m.gradient[k]).abs() <= 1e-6 * scale.max(fd.abs()),
                    "k={k} fd={fd} an={}",
                    m.gradient[k]
                );
            }
        }
    }

    #[test]
    fn log_mean_concave_along_rays() {
        // second difference of log η in each coordinate is nonpositive
        let theta = [12.0, 150.0, 8.0];
        let p = pt(0.8, 3.5, 0.0);
        for k in 0..3 {
            let h = 1e-2 * theta[k];
            let f = |d: f64| {
                let mut a = theta;
                a[k] += d;
                linear_predictor(&Theta::from_array(a), p.paint_exposure, p.gas_exposure).ln()
            };
            let second = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
            let eta = linear_predictor(&Theta::from_array(theta), 0.8, 3.5);
            let x = [1.0, 0.8, 3.5][k];
            assert!(second <= 0.0);
            assert!((second + x * x / (eta * eta)).abs() < 1e-6);
        }
    }

    #[test]
    fn fitted_mean_lognormal_factor() {
        let theta = Theta::new(100.0, 0.0, 0.0);
        let p = pt(0.0, 0.0, 0.0);
        assert_eq!(fitted_mean(&theta, 0.0, &p), 100.0);
        // exp(1.02² / 2) = exp(0.5202); reference value from a 30-digit evaluation
        let expected = 168.236_408_887_162_19_f64;
        let got = fitted_mean(&theta, 1.02 * 1.02, &p);
        assert!((got - 100.0 * 0.5202f64.exp()).abs() < 1e-12);
        assert!((got - expected).abs() < 1e-9, "{got}");
        assert_eq!(fitted_mean(&Theta::new(0.0, 0.0, 0.0), 2.0, &p), 0.0);
    }

    #[test]
    fn fitted_to_linear_ratio_constant() {
        let theta = Theta::new(10.0, 100.0, 5.0);
        let r1 = fitted_mean(&theta, 0.8, &pt(1.0, 2.0, 0.0)) / linear_predictor(&theta, 1.0, 2.0);
        let r2 = fitted_mean(&theta, 0.8, &pt(4.0, 0.5, 0.0)) / linear_predictor(&theta, 4.0, 0.5);
        assert!((r1 - r2).abs() < 1e-14);
    }

    #[test]
    fn likelihood_closed_forms() {
        let theta = Theta::new(10.0, 0.0, 0.0);
        let l = 10f64.ln();
        let data: Vec<_> = (0..4).map(|_| pt(1.0, 1.0, l)).collect();
        let ll = log_likelihood(&theta, 1.0, &data).unwrap();
        assert!((ll + 2.0 * std::f64::consts::TAU.ln()).abs() < 1e-12);

        let r = 0.37;
        let one = [pt(0.0, 0.0, l + r)];
        let ll = log_likelihood(&theta, 1.0, &one).unwrap();
        assert!((ll - (-0.5 * std::f64::consts::TAU.ln() - r * r / 2.0)).abs() < 1e-12);
        assert!(log_likelihood(&theta, 0.0, &one).is_err());
    }

    #[test]
    fn sigma2_argmax_is_rss_over_n() {
        let theta = Theta::new(10.0, 50.0, 3.0);
        let data: Vec<_> = (0..25)
            .map(|i| {
                let t = i as f64 * 0.1;
                let g = 5.0 - i as f64 * 0.15;
                let noise = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
                pt(t, g, linear_predictor(&theta, t, g).ln() + noise)
            })
            .collect();
        let n = data.len();
        let rss_v = rss(&theta, &data).unwrap();
        let mle = rss_v / n as f64;
        // 1-D grid oracle
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 1..=20000 {
            let s2 = k as f64 * 1e-5;
            let ll = log_likelihood(&theta, s2, &data).unwrap();
            if ll > best.0 {
                best = (ll, s2);
            }
        }
        assert!((best.1 - mle).abs() <= 1e-5, "grid {} vs {}", best.1, mle);
        let prof = profiled_log_likelihood(rss_v, n);
        let direct = log_likelihood(&theta, mle, &data).unwrap();
        assert!((prof - direct).abs() < 1e-10);
    }

    #[test]
    fn generic_over_f32() {
        let theta = Theta::new(1.0f32, 1.0, 1.0);
        let p = DesignPoint::from_concentration(1.0f32, 2.0, 4.0, 2000).unwrap();
        let m = log_mean(&theta, &p).unwrap();
        assert!((m.mu_log - 4.0f32.ln()).abs() < 1e-6);
        assert!(DesignPoint::from_concentration(1.0f32, 2.0, 0.0, 2000).is_err());
    }
}
