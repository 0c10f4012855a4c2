//! Regression diagnostics on the Gauss-Newton linearization at `θ̂`.
//!
//! Leverages, studentized residuals and Cook's distances treat the Jacobian
//! `J` of `log η` as the design matrix of a linear model. Exact case
//! deletion is O(n) refits and is used only as a test oracle.

mod lowess;

pub use lowess::{lowess, lowess_at, Smooth};

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::inference::{replicate_response, BootstrapOptions, BootstrapResult};
use crate::linalg::SymMatrix;
use crate::model::DesignPoint;
use crate::scalar::{mean, sample_sd, Scalar};

/// Typical measurement SD on the log scale: a reading within a factor of
/// about 2.7 of the true concentration. Used to annotate reports only.
pub const MEASUREMENT_SD_LOG: f64 = 0.5;

/// Leverage threshold above which `1 − h` is treated as zero.
const PERFECT_LEVERAGE: f64 = 1e-10;

/// Diagonal of `J (JᵀJ)⁻¹ Jᵀ` over the identified columns.
pub fn leverage<T: Scalar>(jacobian: &[[T; 3]]) -> Result<Vec<T>> {
    let a = SymMatrix::gram(jacobian, 3);
    let live: Vec<usize> = (0..3).filter(|&k| a.get(k, k) > T::zero()).collect();
    let inv = a
        .select(&live)
        .inverse(T::tol(1e-10))
        .ok_or_else(|| Error::Collinear("JᵀJ is singular".into()))?;
    Ok(jacobian
        .iter()
        .map(|row| {
            let r: Vec<T> = live.iter().map(|&k| row[k]).collect();
            inv.quad_form(&r).max(T::zero()).min(T::one())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Studentized<T> {
    pub leverage: Vec<T>,
    /// `e_i / (s √(1 − h_ii))` with `s² = RSS/(n − p)`.
    pub internal: Vec<Option<T>>,
    /// `e_i / (s_(i) √(1 − h_ii))`, `s_(i)` estimated without sample `i`.
    pub external: Vec<Option<T>>,
    /// `min(1, 2n·P(T_{n−p−1} > |t_i|))`.
    pub bonferroni_p: Vec<Option<f64>>,
    /// Samples with `h_ii = 1`; their residual carries no information and
    /// their studentized values are undefined.
    pub perfect_leverage: Vec<usize>,
    pub df: usize,
}

/// Leverage, studentized residuals and Bonferroni outlier p-values.
pub fn hat_and_student<T: Scalar>(fit: &FitResult<T>) -> Result<Studentized<T>> {
    let n = fit.n();
    let p = fit.rank();
    if n < p + 2 {
        return Err(Error::DegenerateDesign(format!(
            "studentized residuals need n ≥ {}, got {n}",
            p + 2
        )));
    }
    let h = leverage(&fit.jacobian)?;
    let df_int = T::from_usize_lossy(n - p);
    let df_ext = n - p - 1;
    let s2 = fit.rss / df_int;
    let t_dist = StudentsT::new(0.0, 1.0, df_ext as f64).expect("positive df");
    let mut internal = Vec::with_capacity(n);
    let mut external = Vec::with_capacity(n);
    let mut bonferroni_p = Vec::with_capacity(n);
    let mut perfect_leverage = Vec::new();
    for (i, (&e, &hi)) in fit.residuals.iter().zip(&h).enumerate() {
        let q = T::one() - hi;
        if q <= T::tol(PERFECT_LEVERAGE) {
            perfect_leverage.push(i);
            internal.push(None);
            external.push(None);
            bonferroni_p.push(None);
            continue;
        }
        let r = if s2 > T::zero() { e / (s2 * q).sqrt() } else { T::zero() };
        let s2_i = (fit.rss - e * e / q) / T::from_usize_lossy(df_ext);
        let t = if s2_i > T::zero() {
            e / (s2_i * q).sqrt()
        } else if e == T::zero() {
            T::zero()
        } else {
            T::infinity()
        };
        let tail = 1.0 - t_dist.cdf(t.abs().to_f64_lossy());
        internal.push(Some(r));
        external.push(Some(t));
        bonferroni_p.push(Some((2.0 * n as f64 * tail).min(1.0)));
    }
    Ok(Studentized {
        leverage: h,
        internal,
        external,
        bonferroni_p,
        perfect_leverage,
        df: df_ext,
    })
}

/// `D_i = r_i² h_ii / (p (1 − h_ii))` with internally studentized `r_i`.
pub fn cooks_distance<T: Scalar>(fit: &FitResult<T>) -> Result<Vec<Option<T>>> {
    let st = hat_and_student(fit)?;
    let p = T::from_usize_lossy(fit.rank());
    Ok(st
        .internal
        .iter()
        .zip(&st.leverage)
        .map(|(r, &h)| r.map(|r| r * r * h / (p * (T::one() - h))))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Cook–Weisberg score test for non-constant variance.
///
/// Regresses `u_i = e_i²/σ̂²` on the columns of `predictors` (one `Vec` per
/// predictor, each of length n) plus an intercept; the statistic is half
/// the regression sum of squares, referred to χ² with one degree of freedom
/// per predictor. With `predictors` empty the fitted `log η̂` is used.
pub fn score_test_hetero<T: Scalar>(
    fit: &FitResult<T>,
    data: &[DesignPoint<T>],
    predictors: &[Vec<T>],
) -> Result<ScoreTest> {
    let n = fit.n();
    let default;
    let z: &[Vec<T>] = if predictors.is_empty() {
        default = [fit.fitted_log(data)];
        &default
    } else {
        predictors
    };
    if z.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput("variance predictor length differs from n".into()));
    }
    let q = z.len();
    let centered: Vec<Vec<f64>> = z
        .iter()
        .map(|c| {
            let c: Vec<f64> = c.iter().map(|v| v.to_f64_lossy()).collect();
            let m = c.iter().sum::<f64>() / n as f64;
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    for (j, c) in centered.iter().enumerate() {
        let ss: f64 = c.iter().map(|v| v * v).sum();
        let scale: f64 = z[j].iter().map(|v| v.to_f64_lossy().abs()).fold(0.0, f64::max);
        if ss <= 1e-24 * (n as f64) * scale.max(1.0).powi(2) {
            return Err(Error::InvalidInput(format!("variance predictor {j} is constant")));
        }
    }
    let sigma2 = fit.sigma2.to_f64_lossy();
    if !(sigma2 > 0.0) {
        return Ok(ScoreTest { statistic: 0.0, df: q, p_value: 1.0 });
    }
    let u: Vec<f64> = fit
        .residuals
        .iter()
        .map(|e| e.to_f64_lossy().powi(2) / sigma2)
        .collect();
    let ubar = u.iter().sum::<f64>() / n as f64;
    let uc: Vec<f64> = u.iter().map(|v| v - ubar).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| centered.iter().map(|c| c[i]).collect()).collect();
    let b = crate::linalg::least_squares(&rows, &uc, q, 1e-12)
        .ok_or_else(|| Error::Collinear("variance predictors are collinear".into()))?;
    let ss_reg: f64 = rows
        .iter()
        .map(|r| r.iter().zip(&b).map(|(x, c)| x * c).sum::<f64>().powi(2))
        .sum();
    let statistic = ss_reg / 2.0;
    let p_value = 1.0 - ChiSquared::new(q as f64).expect("df ≥ 1").cdf(statistic);
    Ok(ScoreTest { statistic, df: q, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceRatio {
    /// `σ̂² / V̂_ε`.
    pub ratio: f64,
    /// Replicate SD of the ratio, when a bootstrap was supplied.
    pub bootstrap_se: Option<f64>,
    /// Pooled within-year variance `V̂_ε` of log concentration.
    pub pooled_variance: f64,
    /// Degrees of freedom `Σ (n_y − 1)` behind `V̂_ε`.
    pub df: usize,
    /// Year-built groups with at least two samples.
    pub groups: usize,
}

/// Pooled within-year-built variance of `y`; `(variance, df, groups)`.
fn pooled_within_year<T: Scalar>(data: &[DesignPoint<T>], y: &[T]) -> Result<(f64, usize, usize)> {
    let mut by_year: std::collections::BTreeMap<i32, Vec<f64>> = Default::default();
    for (p, v) in data.iter().zip(y) {
        by_year.entry(p.year_built).or_default().push(v.to_f64_lossy());
    }
    let (mut ss, mut df, mut groups) = (0.0, 0usize, 0usize);
    for vals in by_year.values().filter(|v| v.len() >= 2) {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        ss += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        df += vals.len() - 1;
        groups += 1;
    }
    if groups == 0 {
        return Err(Error::InvalidInput(
            "variance ratio needs at least one year built with two or more samples".into(),
        ));
    }
    Ok((ss / df as f64, df, groups))
}

/// Ratio of the model variance to the pooled intra-year variance of
/// `log L`. Values well above 1 point to variation the exposures do not
/// explain; the bootstrap SE recomputes the ratio on every replicate.
pub fn variance_ratio<T: Scalar>(
    fit: &FitResult<T>,
    data: &[DesignPoint<T>],
    bootstrap: Option<(&BootstrapResult<T>, &BootstrapOptions)>,
) -> Result<VarianceRatio> {
    let y: Vec<T> = data.iter().map(|p| p.log_concentration).collect();
    let (pooled, df, groups) = pooled_within_year(data, &y)?;
    let ratio = fit.sigma2.to_f64_lossy() / pooled;
    let bootstrap_se = match bootstrap {
        None => None,
        Some((b, opts)) => {
            let ratios = b
                .replicates
                .iter()
                .map(|r| {
                    let ystar = replicate_response(fit, data, opts, r.index)?;
                    let (v, _, _) = pooled_within_year(data, &ystar)?;
                    Ok(r.sigma2.to_f64_lossy() / v)
                })
                .collect::<Result<Vec<f64>>>()?;
            Some(sample_sd(&ratios))
        }
    };
    Ok(VarianceRatio {
        ratio,
        bootstrap_se,
        pooled_variance: pooled,
        df,
        groups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BackgroundCheck {
    pub reference_mean: f64,
    pub reference_se: f64,
    pub estimate: f64,
    pub estimate_se: f64,
    pub z: f64,
    /// `|z| < 1.96`.
    pub consistent: bool,
}

/// Compares a reference background level (e.g. the mean of park samples)
/// with `θ̂0` through `z = (m − θ̂0)/√(SE_m² + SE_θ0²)`.
pub fn background_consistency_summary(
    reference_mean: f64,
    reference_se: f64,
    estimate: f64,
    estimate_se: f64,
) -> BackgroundCheck {
    let denom = (reference_se.powi(2) + estimate_se.powi(2)).sqrt();
    let diff = reference_mean - estimate;
    let z = if diff == 0.0 {
        0.0
    } else if denom > 0.0 {
        diff / denom
    } else {
        diff.signum() * f64::INFINITY
    };
    BackgroundCheck {
        reference_mean,
        reference_se,
        estimate,
        estimate_se,
        z,
        consistent: z.abs() < 1.96,
    }
}

/// [`background_consistency_summary`] from raw reference concentrations
/// (ppm); the reference SE is `sd/√m`.
pub fn background_consistency<T: Scalar>(reference: &[T], fit: &FitResult<T>) -> Result<BackgroundCheck> {
    if reference.is_empty() {
        return Err(Error::InvalidInput("no reference samples".into()));
    }
    let m = mean(reference).to_f64_lossy();
    let se = sample_sd(reference).to_f64_lossy() / (reference.len() as f64).sqrt();
    let est = fit.theta.background.to_f64_lossy();
    let est_se = fit.cov_theta[0][0].max(T::zero()).sqrt().to_f64_lossy();
    Ok(background_consistency_summary(m, se, est, est_se))
}

/// Horizontal axis of a marginal model plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalAxis {
    PaintExposure,
    GasExposure,
    YearBuilt,
    Fitted,
}

impl MarginalAxis {
    pub const ALL: [MarginalAxis; 4] = [
        MarginalAxis::PaintExposure,
        MarginalAxis::GasExposure,
        MarginalAxis::YearBuilt,
        MarginalAxis::Fitted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MarginalAxis::PaintExposure => "paint_exposure",
            MarginalAxis::GasExposure => "gas_exposure",
            MarginalAxis::YearBuilt => "year_built",
            MarginalAxis::Fitted => "fitted",
        }
    }

    fn values<T: Scalar>(self, fit: &FitResult<T>, data: &[DesignPoint<T>]) -> Vec<T> {
        match self {
            MarginalAxis::PaintExposure => data.iter().map(|p| p.paint_exposure).collect(),
            MarginalAxis::GasExposure => data.iter().map(|p| p.gas_exposure).collect(),
            MarginalAxis::YearBuilt => data.iter().map(|p| T::lit(p.year_built as f64)).collect(),
            MarginalAxis::Fitted => fit.fitted_log(data),
        }
    }
}

/// Data smooth and model smooth of a marginal model plot on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalPlot<T> {
    pub axis: MarginalAxis,
    pub grid: Vec<T>,
    /// Lowess of observed `log L`.
    pub data_smooth: Vec<T>,
    /// Lowess of fitted `log η̂`.
    pub model_smooth: Vec<T>,
    /// `σ̂·√Σl²`, the pointwise SE of the data smooth.
    pub band: Vec<T>,
}

pub fn marginal_plot_data<T: Scalar>(
    fit: &FitResult<T>,
    data: &[DesignPoint<T>],
    axis: MarginalAxis,
    fraction: f64,
    grid_points: usize,
) -> Result<MarginalPlot<T>> {
    let x = axis.values(fit, data);
    let lo = x.iter().copied().fold(T::infinity(), T::min);
    let hi = x.iter().copied().fold(T::neg_infinity(), T::max);
    let m = grid_points.max(2);
    let grid: Vec<T> = (0..m)
        .map(|i| {
            if i + 1 == m {
                hi
            } else {
                lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(m - 1)
            }
        })
        .collect();
    let y: Vec<T> = data.iter().map(|p| p.log_concentration).collect();
    let ds = lowess_at(&x, &y, &grid, fraction, 0)?;
    let ms = lowess_at(&x, &fit.fitted_log(data), &grid, fraction, 0)?;
    let sigma = fit.sigma();
    Ok(MarginalPlot {
        axis,
        grid,
        band: ds.weight_ss.iter().map(|&w| sigma * w.sqrt()).collect(),
        data_smooth: ds.fitted,
        model_smooth: ms.fitted,
    })
}

/// One row of the per-sample diagnostics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleDiagnostics {
    pub id: String,
    pub year_built: i32,
    pub residual: f64,
    pub student_t: Option<f64>,
    pub bonferroni_p: Option<f64>,
    pub leverage: f64,
    pub cooks_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport<T> {
    pub schema_version: u32,
    pub n: usize,
    pub parameters: usize,
    pub samples: Vec<SampleDiagnostics>,
    pub leverage_sum: T,
    pub perfect_leverage: Vec<String>,
    /// Samples with Bonferroni p < 0.05.
    pub outliers: Vec<String>,
    pub max_cooks_d: Option<String>,
    pub score_test: ScoreTest,
    pub variance_ratio: Option<VarianceRatio>,
    pub background: Option<BackgroundCheck>,
    pub sigma: T,
    pub measurement_sd_log: f64,
}

/// Inputs to [`diagnose`] beyond the fit itself.
#[derive(Default)]
pub struct DiagnoseInputs<'a, T> {
    pub ids: Option<&'a [String]>,
    pub bootstrap: Option<(&'a BootstrapResult<T>, &'a BootstrapOptions)>,
    /// Reference background concentrations (ppm), e.g. park samples.
    pub reference: Option<&'a [T]>,
}

/// Runs every per-sample and global diagnostic. The variance ratio is
/// omitted (not an error) when no year built has replicate samples.
pub fn diagnose<T: Scalar>(
    fit: &FitResult<T>,
    data: &[DesignPoint<T>],
    inputs: &DiagnoseInputs<'_, T>,
) -> Result<DiagnosticsReport<T>> {
    let st = hat_and_student(fit)?;
    let cooks = cooks_distance(fit)?;
    let id = |i: usize| match inputs.ids {
        Some(ids) => ids[i].clone(),
        None => i.to_string(),
    };
    let samples: Vec<SampleDiagnostics> = (0..fit.n())
        .map(|i| SampleDiagnostics {
            id: id(i),
            year_built: data[i].year_built,
            residual: fit.residuals[i].to_f64_lossy(),
            student_t: st.external[i].map(|v| v.to_f64_lossy()),
            bonferroni_p: st.bonferroni_p[i],
            leverage: st.leverage[i].to_f64_lossy(),
            cooks_d: cooks[i].map(|v| v.to_f64_lossy()),
        })
        .collect();
    let outliers = samples
        .iter()
        .filter(|s| s.bonferroni_p.is_some_and(|p| p < 0.05))
        .map(|s| s.id.clone())
        .collect();
    let max_cooks_d = samples
        .iter()
        .filter_map(|s| s.cooks_d.map(|d| (d, &s.id)))
        .fold(None::<(f64, &String)>, |best, cur| match best {
            Some(b) if b.0 >= cur.0 => Some(b),
            _ => Some(cur),
        })
        .map(|(_, id)| id.clone());
    let variance_ratio = match variance_ratio(fit, data, inputs.bootstrap) {
        Ok(v) => Some(v),
        Err(Error::InvalidInput(_)) => None,
        Err(e) => return Err(e),
    };
    let background = inputs
        .reference
        .filter(|r| !r.is_empty())
        .map(|r| background_consistency(r, fit))
        .transpose()?;
    Ok(DiagnosticsReport {
        schema_version: crate::SCHEMA_VERSION,
        n: fit.n(),
        parameters: fit.rank(),
        leverage_sum: st.leverage.iter().copied().sum(),
        perfect_leverage: st.perfect_leverage.iter().map(|&i| id(i)).collect(),
        outliers,
        max_cooks_d,
        score_test: score_test_hetero(fit, data, &[])?,
        variance_ratio,
        background,
        sigma: fit.sigma(),
        measurement_sd_log: MEASUREMENT_SD_LOG,
        samples,
    })
}
