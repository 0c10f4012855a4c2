//! Yearly consumption series and the cumulative exposure predictors built
//! from them.
//!
//! A [`YearlySeries`] is contiguous over its year range; a year whose amount
//! is unknown carries an explicit missing marker rather than being absent or
//! zero. Zeroing years is a [`SeriesPolicy`] decision, imputation is a
//! regression through the origin on a reference series, and [`cumulate`]
//! turns the cleaned series into tail sums `C_y = s_y + ... + s_Y`.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Amounts by calendar year, in millions of metric tons of lead.
#[derive(Debug, Clone, PartialEq)]
pub struct YearlySeries<T> {
    first_year: i32,
    values: Vec<Option<T>>,
}

impl<T: Scalar> YearlySeries<T> {
    /// Builds a series starting at `first_year`; `None` marks a missing year.
    pub fn new(first_year: i32, values: Vec<Option<T>>) -> Result<Self> {
        for (k, v) in values.iter().enumerate() {
            if let Some(x) = v {
                if !x.is_finite() || *x < T::zero() {
                    return Err(Error::InvalidSeries(format!(
                        "amount {x} for year {} must be finite and nonnegative",
                        first_year + k as i32
                    )));
                }
            }
        }
        Ok(Self { first_year, values })
    }

    /// Fully observed series.
    pub fn from_amounts(first_year: i32, amounts: &[T]) -> Result<Self> {
        Self::new(first_year, amounts.iter().map(|&a| Some(a)).collect())
    }

    /// Builds a series from `(year, amount)` rows. Years must be strictly
    /// increasing with no gaps.
    pub fn from_pairs(pairs: &[(i32, Option<T>)]) -> Result<Self> {
        let Some(&(first, _)) = pairs.first() else {
            return Err(Error::InvalidSeries("series has no rows".into()));
        };
        for w in pairs.windows(2) {
            if w[1].0 != w[0].0 + 1 {
                return Err(Error::InvalidSeries(format!(
                    "years must be contiguous and increasing: {} followed by {}",
                    w[0].0, w[1].0
                )));
            }
        }
        Self::new(first, pairs.iter().map(|p| p.1).collect())
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.values.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, year: i32) -> bool {
        year >= self.first_year && year <= self.last_year()
    }

    fn index(&self, year: i32) -> Option<usize> {
        self.contains(year).then(|| (year - self.first_year) as usize)
    }

    /// `Some(Some(x))` observed, `Some(None)` missing, `None` outside the domain.
    pub fn entry(&self, year: i32) -> Option<Option<T>> {
        self.index(year).map(|i| self.values[i])
    }

    /// Observed amount, or `None` when missing or out of range.
    pub fn amount(&self, year: i32) -> Option<T> {
        self.entry(year).flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, Option<T>)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, v)| (self.first_year + k as i32, *v))
    }

    pub fn missing_years(&self) -> Vec<i32> {
        self.iter().filter(|(_, v)| v.is_none()).map(|(y, _)| y).collect()
    }

    /// Widens the domain to cover `[lo, hi]`, adding missing markers for the
    /// new years. Existing entries are kept.
    pub fn extended(&self, lo: i32, hi: i32) -> Self {
        let first = lo.min(self.first_year);
        let last = hi.max(self.last_year());
        let values = (first..=last)
            .map(|y| self.entry(y).flatten())
            .collect();
        Self {
            first_year: first,
            values,
        }
    }
}

/// Zeroing and scaling rules applied to a raw series.
///
/// Years `<= zero_before` and years `>= zero_after` are set to zero (even if
/// missing); every other observed amount is multiplied by `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy<T>", into = "RawPolicy<T>")]
#[serde(bound = "T: Scalar")]
pub struct SeriesPolicy<T> {
    zero_before: Option<i32>,
    zero_after: Option<i32>,
    scale: T,
}

#[derive(Serialize, Deserialize)]
struct RawPolicy<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zero_before: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zero_after: Option<i32>,
    #[serde(default)]
    scale: Option<T>,
}

impl<T: Scalar> TryFrom<RawPolicy<T>> for SeriesPolicy<T> {
    type Error = Error;
    fn try_from(raw: RawPolicy<T>) -> Result<Self> {
        SeriesPolicy::new(raw.zero_before, raw.zero_after, raw.scale.unwrap_or(T::one()))
    }
}

impl<T: Scalar> From<SeriesPolicy<T>> for RawPolicy<T> {
    fn from(p: SeriesPolicy<T>) -> Self {
        RawPolicy {
            zero_before: p.zero_before,
            zero_after: p.zero_after,
            scale: Some(p.scale),
        }
    }
}

impl<T: Scalar> Default for SeriesPolicy<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> SeriesPolicy<T> {
    pub fn new(zero_before: Option<i32>, zero_after: Option<i32>, scale: T) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::InvalidInput(format!(
                "series scale must be positive, got {scale}"
            )));
        }
        if let (Some(b), Some(a)) = (zero_before, zero_after) {
            if b > a {
                return Err(Error::InvalidInput(format!(
                    "zero_before {b} exceeds zero_after {a}"
                )));
            }
        }
        Ok(Self {
            zero_before,
            zero_after,
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            zero_before: None,
            zero_after: None,
            scale: T::one(),
        }
    }

    pub fn zero_before(&self) -> Option<i32> {
        self.zero_before
    }

    pub fn zero_after(&self) -> Option<i32> {
        self.zero_after
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn zeroes(&self, year: i32) -> bool {
        self.zero_before.is_some_and(|b| year <= b) || self.zero_after.is_some_and(|a| year >= a)
    }
}

pub fn apply_policy<T: Scalar>(series: &YearlySeries<T>, policy: &SeriesPolicy<T>) -> YearlySeries<T> {
    let values = series
        .iter()
        .map(|(year, v)| {
            if policy.zeroes(year) {
                Some(T::zero())
            } else {
                v.map(|x| x * policy.scale)
            }
        })
        .collect();
    YearlySeries {
        first_year: series.first_year,
        values,
    }
}

/// Outcome of a through-origin imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult<T> {
    pub slope: T,
    /// Uncentered: `1 - RSS / Σ t²`.
    pub r_squared: T,
    pub filled: YearlySeries<T>,
    pub imputed_years: Vec<i32>,
}

/// Fills missing `target` years with `slope × reference`, where `slope` comes
/// from regressing `target` on `reference` through the origin over
/// `fit_window`.
pub fn impute_proportional<T: Scalar>(
    target: &YearlySeries<T>,
    reference: &YearlySeries<T>,
    fit_window: RangeInclusive<i32>,
) -> Result<ImputationResult<T>> {
    if fit_window.is_empty() {
        return Err(Error::Imputation("fit window is empty".into()));
    }
    let mut str_ = T::zero();
    let mut srr = T::zero();
    let mut stt = T::zero();
    let mut pairs = Vec::new();
    for year in fit_window.clone() {
        let t = target.amount(year).ok_or_else(|| Error::MissingYear {
            year,
            context: "imputation target over fit window".into(),
        })?;
        let r = reference.amount(year).ok_or_else(|| Error::MissingYear {
            year,
            context: "imputation reference over fit window".into(),
        })?;
        str_ = str_ + t * r;
        srr = srr + r * r;
        stt = stt + t * t;
        pairs.push((t, r));
    }
    if srr == T::zero() {
        return Err(Error::Imputation(
            "reference series is identically zero on the fit window".into(),
        ));
    }
    let slope = str_ / srr;
    let rss: T = pairs
        .iter()
        .map(|&(t, r)| (t - slope * r) * (t - slope * r))
        .sum();
    let r_squared = if stt > T::zero() {
        T::one() - rss / stt
    } else {
        T::one()
    };

    let mut values = target.values.clone();
    let mut imputed_years = Vec::new();
    for (k, v) in values.iter_mut().enumerate() {
        if v.is_none() {
            let year = target.first_year + k as i32;
            let r = reference.amount(year).ok_or_else(|| Error::MissingYear {
                year,
                context: "imputation reference for a year needing imputation".into(),
            })?;
            *v = Some(slope * r);
            imputed_years.push(year);
        }
    }
    Ok(ImputationResult {
        slope,
        r_squared,
        filled: YearlySeries::new(target.first_year, values)?,
        imputed_years,
    })
}

/// Tail sums `C_y = Σ_{i=y}^{Y} s_i` over `[y_min, Y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeExposure<T> {
    measurement_year: i32,
    y_min: i32,
    values: Vec<T>,
}

impl<T: Scalar> CumulativeExposure<T> {
    pub fn measurement_year(&self) -> i32 {
        self.measurement_year
    }

    pub fn y_min(&self) -> i32 {
        self.y_min
    }

    pub fn contains(&self, year: i32) -> bool {
        year >= self.y_min && year <= self.measurement_year
    }

    pub fn get(&self, year: i32) -> Option<T> {
        self.contains(year)
            .then(|| self.values[(year - self.y_min) as usize])
    }

    pub fn years(&self) -> RangeInclusive<i32> {
        self.y_min..=self.measurement_year
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, T)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &c)| (self.y_min + k as i32, c))
    }

    /// Recovers the yearly amounts `s_y = C_y - C_{y+1}` (with `s_Y = C_Y`).
    pub fn amounts(&self) -> Vec<(i32, T)> {
        let n = self.values.len();
        (0..n)
            .map(|k| {
                let next = if k + 1 < n { self.values[k + 1] } else { T::zero() };
                (self.y_min + k as i32, (self.values[k] - next).max(T::zero()))
            })
            .collect()
    }

    /// Every value multiplied by `k`.
    pub fn scaled(&self, k: T) -> Self {
        Self {
            measurement_year: self.measurement_year,
            y_min: self.y_min,
            values: self.values.iter().map(|&v| v * k).collect(),
        }
    }

    /// Rebuilds from explicit `(year, cumulative)` rows, as read back from CSV.
    pub fn from_pairs(pairs: &[(i32, T)]) -> Result<Self> {
        let Some(&(first, _)) = pairs.first() else {
            return Err(Error::InvalidSeries("cumulative exposure has no rows".into()));
        };
        for w in pairs.windows(2) {
            if w[1].0 != w[0].0 + 1 {
                return Err(Error::InvalidSeries(format!(
                    "exposure years must be contiguous: {} followed by {}",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 > w[0].1 {
                return Err(Error::InvalidSeries(format!(
                    "cumulative exposure increases from {} to {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if pairs.iter().any(|p| !(p.1 >= T::zero()) || !p.1.is_finite()) {
            return Err(Error::InvalidSeries("cumulative exposure must be finite and nonnegative".into()));
        }
        Ok(Self {
            measurement_year: pairs.last().unwrap().0,
            y_min: first,
            values: pairs.iter().map(|p| p.1).collect(),
        })
    }
}

pub fn cumulate<T: Scalar>(
    series: &YearlySeries<T>,
    measurement_year: i32,
    y_min: i32,
) -> Result<CumulativeExposure<T>> {
    if y_min > measurement_year {
        return Err(Error::InvalidInput(format!(
            "y_min {y_min} is after the measurement year {measurement_year}"
        )));
    }
    let len = (measurement_year - y_min + 1) as usize;
    let mut values = vec![T::zero(); len];
    let mut running = T::zero();
    for year in (y_min..=measurement_year).rev() {
        let s = series.amount(year).ok_or_else(|| Error::MissingYear {
            year,
            context: "series being cumulated".into(),
        })?;
        running = s + running;
        values[(year - y_min) as usize] = running;
    }
    Ok(CumulativeExposure {
        measurement_year,
        y_min,
        values,
    })
}
