//! Estimated fractional contributions (EFC) of background, paint and
//! gasoline to the mean concentration, by year built.
//!
//! The lognormal factor `exp(σ²/2)` multiplies every term of the mean
//! equally and cancels from the fractions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::inference::BootstrapResult;
use crate::model::{linear_predictor, Theta};
use crate::scalar::{sample_sd, Scalar};
use crate::series::CumulativeExposure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fractions<T> {
    pub background: T,
    pub paint: T,
    pub gas: T,
    /// Linear predictor (ppm).
    pub eta: T,
}

impl<T: Scalar> Fractions<T> {
    pub fn get(&self, c: Component) -> T {
        match c {
            Component::Background => self.background,
            Component::Paint => self.paint,
            Component::Gas => self.gas,
        }
    }
}

/// `(θ0, θ1·T, θ2·G) / η`.
pub fn efc<T: Scalar>(theta: &Theta<T>, paint_exposure: T, gas_exposure: T) -> Result<Fractions<T>> {
    let eta = linear_predictor(theta, paint_exposure, gas_exposure);
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(Error::NonPositivePredictor { eta: eta.to_f64_lossy() });
    }
    Ok(Fractions {
        background: theta.background / eta,
        paint: theta.paint_rate * paint_exposure / eta,
        gas: theta.gas_rate * gas_exposure / eta,
        eta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Background,
    Paint,
    Gas,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Background, Component::Paint, Component::Gas];
}

/// Per-year ±1 SD of each fraction across bootstrap replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bands<T> {
    pub background: Vec<T>,
    pub paint: Vec<T>,
    pub gas: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApportionmentCurve<T> {
    pub years: Vec<i32>,
    pub f_background: Vec<T>,
    pub f_paint: Vec<T>,
    pub f_gas: Vec<T>,
    pub eta: Vec<T>,
    pub bands: Option<Bands<T>>,
}

impl<T: Scalar> ApportionmentCurve<T> {
    pub fn component(&self, c: Component) -> &[T] {
        match c {
            Component::Background => &self.f_background,
            Component::Paint => &self.f_paint,
            Component::Gas => &self.f_gas,
        }
    }

    /// CSV rows `year, f_background, f_paint, f_gas, band_b, band_p, band_g,
    /// eta_ppm`. With `clip`, fractions are clamped to `[0, 1]` (for display;
    /// statistics always use the unclipped values). Missing bands are empty.
    pub fn rows(&self, clip: bool) -> Vec<Vec<String>> {
        let f = |v: T| {
            if clip {
                v.max(T::zero()).min(T::one()).to_string()
            } else {
                v.to_string()
            }
        };
        (0..self.years.len())
            .map(|i| {
                let band = |sel: fn(&Bands<T>) -> &Vec<T>| {
                    self.bands.as_ref().map(|b| sel(b)[i].to_string()).unwrap_or_default()
                };
                vec![
                    self.years[i].to_string(),
                    f(self.f_background[i]),
                    f(self.f_paint[i]),
                    f(self.f_gas[i]),
                    band(|b| &b.background),
                    band(|b| &b.paint),
                    band(|b| &b.gas),
                    self.eta[i].to_string(),
                ]
            })
            .collect()
    }

    pub const CSV_HEADER: [&'static str; 8] = [
        "year",
        "f_background",
        "f_paint",
        "f_gas",
        "band_b",
        "band_p",
        "band_g",
        "eta_ppm",
    ];
}

/// EFC at every year in the common domain of both exposures, with bootstrap
/// bands when replicates are given.
pub fn efc_curve<T: Scalar>(
    fit: &FitResult<T>,
    paint: &CumulativeExposure<T>,
    gas: &CumulativeExposure<T>,
    bootstrap: Option<&BootstrapResult<T>>,
) -> Result<ApportionmentCurve<T>> {
    let lo = paint.y_min().max(gas.y_min());
    let hi = paint.measurement_year().min(gas.measurement_year());
    efc_curve_over(&fit.theta, paint, gas, lo..=hi, bootstrap)
}

/// EFC over an explicit year range.
pub fn efc_curve_over<T: Scalar>(
    theta: &Theta<T>,
    paint: &CumulativeExposure<T>,
    gas: &CumulativeExposure<T>,
    years: std::ops::RangeInclusive<i32>,
    bootstrap: Option<&BootstrapResult<T>>,
) -> Result<ApportionmentCurve<T>> {
    let years: Vec<i32> = years.collect();
    let exposures = years
        .iter()
        .map(|&y| match (paint.get(y), gas.get(y)) {
            (Some(t), Some(g)) => Ok((t, g)),
            _ => Err(Error::OutOfDomain(y)),
        })
        .collect::<Result<Vec<_>>>()?;
    let point = exposures
        .iter()
        .map(|&(t, g)| efc(theta, t, g))
        .collect::<Result<Vec<_>>>()?;
    let bands = match bootstrap {
        None => None,
        Some(b) => {
            let reps = b
                .replicates
                .iter()
                .map(|r| {
                    exposures
                        .iter()
                        .map(|&(t, g)| efc(&r.theta, t, g))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let sd = |c: Component| -> Vec<T> {
                (0..years.len())
                    .map(|i| sample_sd(&reps.iter().map(|r| r[i].get(c)).collect::<Vec<_>>()))
                    .collect()
            };
            Some(Bands {
                background: sd(Component::Background),
                paint: sd(Component::Paint),
                gas: sd(Component::Gas),
            })
        }
    };
    Ok(ApportionmentCurve {
        f_background: point.iter().map(|f| f.background).collect(),
        f_paint: point.iter().map(|f| f.paint).collect(),
        f_gas: point.iter().map(|f| f.gas).collect(),
        eta: point.iter().map(|f| f.eta).collect(),
        years,
        bands,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub first: Component,
    pub second: Component,
    /// Fractional year, linearly interpolated between the bracketing years.
    pub year: f64,
    /// The shared fraction at the crossing.
    pub fraction: f64,
}

/// Years at which two component curves cross, for every pair of components.
pub fn crossing_years<T: Scalar>(curve: &ApportionmentCurve<T>) -> Vec<Crossing> {
    let pairs = [
        (Component::Paint, Component::Gas),
        (Component::Background, Component::Paint),
        (Component::Background, Component::Gas),
    ];
    let mut out = Vec::new();
    for (a, b) in pairs {
        let fa: Vec<f64> = curve.component(a).iter().map(|v| v.to_f64_lossy()).collect();
        let fb: Vec<f64> = curve.component(b).iter().map(|v| v.to_f64_lossy()).collect();
        let d: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x - y).collect();
        // a crossing is a strict sign change between the last and next
        // nonzero differences; runs of exact ties are attributed to their start
        let mut last: Option<usize> = None;
        for i in 0..d.len() {
            if d[i] == 0.0 {
                continue;
            }
            if let Some(j) = last {
                if d[j].signum() != d[i].signum() {
                    let (year, fraction) = if i == j + 1 {
                        let s = d[j] / (d[j] - d[i]);
                        (
                            curve.years[j] as f64 + s,
                            fa[j] + s * (fa[i] - fa[j]),
                        )
                    } else {
                        (curve.years[j + 1] as f64, fa[j + 1])
                    };
                    out.push(Crossing { first: a, second: b, year, fraction });
                }
            }
            last = Some(i);
        }
    }
    out.sort_by(|x, y| x.year.total_cmp(&y.year));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{cumulate, YearlySeries};

    #[test]
    fn fractions_closed_forms() {
        let f = efc(&Theta::new(1.0, 1.0, 1.0), 1.0, 2.0).unwrap();
        assert_eq!((f.background, f.paint, f.gas), (0.25, 0.25, 0.5));
        let f = efc(&Theta::new(7.0, 0.0, 0.0), 3.0, 2.0).unwrap();
        assert_eq!((f.background, f.paint, f.gas), (1.0, 0.0, 0.0));
        assert!(efc(&Theta::new(0.0, 1.0, 1.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn reference_split() {
        // 15.03 / 0.152 = 98.88: the background share fixes the total
        let eta_oracle = 15.03 / 0.152;
        assert!((eta_oracle - 98.9f64).abs() < 0.05);
        let theta = Theta::new(15.03f64, 200.64, 9.93);
        let (t, g) = (0.2090, 4.223);
        let f = efc(&theta, t, g).unwrap();
        assert!((f.background - 0.152).abs() < 0.001);
        assert!((f.paint - 0.424).abs() < 0.001);
        assert!((f.gas - 0.424).abs() < 0.001);
        assert!((f.eta - 98.9).abs() < 0.2);
    }

    fn curve_from(fp: Vec<f64>, fg: Vec<f64>) -> ApportionmentCurve<f64> {
        let n = fp.len();
        ApportionmentCurve {
            years: (2000..2000 + n as i32).collect(),
            f_background: fp.iter().zip(&fg).map(|(p, g)| 1.0 - p - g).collect(),
            f_paint: fp,
            f_gas: fg,
            eta: vec![1.0; n],
            bands: None,
        }
    }

    #[test]
    fn linear_crossing_located() {
        // paint 0.8 → 0.1, gas 0.1 → 0.8 linearly over 8 years: equal at 2003.5
        let fp: Vec<f64> = (0..8).map(|i| 0.8 - 0.1 * i as f64).collect();
        let fg: Vec<f64> = (0..8).map(|i| 0.1 + 0.1 * i as f64).collect();
        let c = crossing_years(&curve_from(fp, fg));
        let pg: Vec<_> = c.iter().filter(|c| c.first == Component::Paint && c.second == Component::Gas).collect();
        assert_eq!(pg.len(), 1);
        assert!((pg[0].year - 2003.5).abs() < 1e-9);
        assert!((pg[0].fraction - 0.45).abs() < 1e-9);
    }

    #[test]
    fn constant_curves_do_not_cross() {
        let c = crossing_years(&curve_from(vec![0.5; 6], vec![0.3; 6]));
        assert!(c.is_empty());
        let c = crossing_years(&curve_from(vec![0.4; 6], vec![0.4; 6]));
        assert!(c.iter().all(|c| c.first != Component::Paint));
    }

    #[test]
    fn curve_rejects_out_of_domain_year() {
        let s = YearlySeries::from_amounts(1950, &[1.0f64; 10]).unwrap();
        let c = cumulate(&s, 1959, 1950).unwrap();
        let theta = Theta::new(1.0, 1.0, 1.0);
        assert!(matches!(
            efc_curve_over(&theta, &c, &c, 1949..=1955, None),
            Err(Error::OutOfDomain(1949))
        ));
        let curve = efc_curve_over(&theta, &c, &c, 1950..=1959, None).unwrap();
        for i in 0..curve.years.len() {
            let s = curve.f_background[i] + curve.f_paint[i] + curve.f_gas[i];
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
