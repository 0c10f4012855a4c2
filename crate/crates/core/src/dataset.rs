//! Sample records and their join onto the exposure predictors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::DesignPoint;
use crate::scalar::Scalar;
use crate::series::CumulativeExposure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteType {
    Foundation,
    Yard,
    Park,
    Other,
}

impl SiteType {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteType::Foundation => "foundation",
            SiteType::Yard => "yard",
            SiteType::Park => "park",
            SiteType::Other => "other",
        }
    }
}

impl fmt::Display for SiteType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SiteType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "foundation" => Ok(SiteType::Foundation),
            "yard" => Ok(SiteType::Yard),
            "park" => Ok(SiteType::Park),
            "other" => Ok(SiteType::Other),
            other => Err(Error::InvalidInput(format!("unknown site type '{other}'"))),
        }
    }
}

/// One row of the samples file.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord<T> {
    pub id: String,
    pub year_built: i32,
    /// ppm
    pub concentration: T,
    pub site_type: SiteType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub site_type: SiteType,
    pub point: DesignPoint<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Vec<DesignPoint<T>> {
        self.samples.iter().map(|s| s.point).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    /// Converts back to records (`concentration = exp(log L)`).
    pub fn to_records(&self) -> Vec<SampleRecord<T>> {
        self.samples
            .iter()
            .map(|s| SampleRecord {
                id: s.id.clone(),
                year_built: s.point.year_built,
                concentration: s.point.log_concentration.exp(),
                site_type: s.site_type,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    PreDomainYear,
    PostMeasurementYear,
    NonPositiveConcentration,
    SiteFilter,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::PreDomainYear => "pre-domain year",
            ExclusionReason::PostMeasurementYear => "built after measurement year",
            ExclusionReason::NonPositiveConcentration => "nonpositive concentration",
            ExclusionReason::SiteFilter => "site type not selected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub year_built: i32,
    pub site_type: SiteType,
    pub reason: ExclusionReason,
}

/// Joins records to exposures by year built.
///
/// Every record ends up either in the returned dataset or in the exclusion
/// log, never both and never neither. Records whose site type is not in
/// `sites` (when given) are excluded first.
pub fn join<T: Scalar>(
    records: &[SampleRecord<T>],
    paint: &CumulativeExposure<T>,
    gas: &CumulativeExposure<T>,
    sites: Option<&[SiteType]>,
) -> (Dataset<T>, Vec<Exclusion>) {
    let lo = paint.y_min().max(gas.y_min());
    let hi = paint.measurement_year().min(gas.measurement_year());
    let mut samples = Vec::new();
    let mut excluded = Vec::new();
    for r in records {
        let reason = if sites.is_some_and(|s| !s.contains(&r.site_type)) {
            Some(ExclusionReason::SiteFilter)
        } else if r.year_built < lo {
            Some(ExclusionReason::PreDomainYear)
        } else if r.year_built > hi {
            Some(ExclusionReason::PostMeasurementYear)
        } else if !(r.concentration > T::zero()) || !r.concentration.is_finite() {
            Some(ExclusionReason::NonPositiveConcentration)
        } else {
            None
        };
        match reason {
            Some(reason) => excluded.push(Exclusion {
                id: r.id.clone(),
                year_built: r.year_built,
                site_type: r.site_type,
                reason,
            }),
            None => samples.push(Sample {
                id: r.id.clone(),
                site_type: r.site_type,
                point: DesignPoint {
                    paint_exposure: paint.get(r.year_built).expect("year in domain"),
                    gas_exposure: gas.get(r.year_built).expect("year in domain"),
                    log_concentration: r.concentration.ln(),
                    year_built: r.year_built,
                },
            }),
        }
    }
    (Dataset { samples }, excluded)
}
