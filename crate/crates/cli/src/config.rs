//! The flat run configuration and flag/environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apportion_core::dataset::SiteType;
use apportion_core::simulator::{ErrorConfig, YearDistribution};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides the configured seed (flags still win).
pub const SEED_ENV: &str = "APPORTION_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub measurement_year: i32,
    pub y_min: i32,

    /// Use the built-in synthetic consumption series instead of files.
    pub synthetic_exposures: bool,
    pub paint_series: Option<PathBuf>,
    pub paint_zero_before: Option<i32>,
    pub paint_zero_after: Option<i32>,
    pub paint_scale: f64,
    pub gas_series: Option<PathBuf>,
    pub gas_zero_before: Option<i32>,
    pub gas_zero_after: Option<i32>,
    pub gas_scale: f64,
    /// Fill missing gasoline years proportionally to this reference series.
    pub gas_impute_reference: Option<PathBuf>,
    pub gas_impute_from: Option<i32>,
    pub gas_impute_to: Option<i32>,

    pub samples: Option<PathBuf>,
    /// Site types kept for fitting; empty keeps every type.
    pub sites: Vec<SiteType>,
    /// Site types whose concentrations serve as the background reference.
    pub reference_sites: Vec<SiteType>,

    pub bootstrap_replicates: usize,
    pub studentized_bootstrap: bool,
    pub seed: u64,
    pub level: f64,
    pub lowess_fraction: f64,
    pub marginal_grid: usize,
    pub output: PathBuf,

    pub sim_n: usize,
    pub sim_background: f64,
    pub sim_paint_rate: f64,
    pub sim_gas_rate: f64,
    pub sim_sigma: f64,
    /// `uniform`, `mn_like` or `us_like`.
    pub sim_years: String,
    pub sim_site_type: SiteType,
    pub sim_epsilon_mean: f64,
    pub sim_epsilon_sd: f64,
    pub sim_shared_errors: bool,
    pub sim_delta_sd: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ErrorConfig::default();
        Self {
            measurement_year: 1986,
            y_min: 1902,
            synthetic_exposures: false,
            paint_series: None,
            paint_zero_before: None,
            paint_zero_after: None,
            paint_scale: 1.0,
            gas_series: None,
            gas_zero_before: None,
            gas_zero_after: None,
            gas_scale: 1.0,
            gas_impute_reference: None,
            gas_impute_from: None,
            gas_impute_to: None,
            samples: None,
            sites: vec![SiteType::Foundation],
            reference_sites: vec![SiteType::Park],
            bootstrap_replicates: 200,
            studentized_bootstrap: false,
            seed: 0,
            level: 0.95,
            lowess_fraction: 0.7,
            marginal_grid: 50,
            output: PathBuf::from("out"),
            sim_n: 300,
            sim_background: 15.0,
            sim_paint_rate: 200.0,
            sim_gas_rate: 10.0,
            sim_sigma: 1.0,
            sim_years: "uniform".into(),
            sim_site_type: SiteType::Foundation,
            sim_epsilon_mean: e.epsilon_mean,
            sim_epsilon_sd: e.epsilon_sd,
            sim_shared_errors: e.shared,
            sim_delta_sd: e.delta_sd,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub level: Option<f64>,
    pub samples: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub measurement_year: Option<i32>,
    pub y_min: Option<i32>,
    pub sites: Option<Vec<SiteType>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paint_series,
            &mut cfg.gas_series,
            &mut cfg.gas_impute_reference,
            &mut cfg.samples,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Flags beat `APPORTION_SEED`, which beats the file.
    pub fn apply(&mut self, o: &Overrides, env_seed: Option<&str>) -> Result<()> {
        if let Some(s) = env_seed {
            self.seed = s
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={s:?} is not an unsigned integer"))?;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(b) = o.replicates {
            self.bootstrap_replicates = b;
        }
        if let Some(l) = o.level {
            self.level = l;
        }
        if let Some(p) = &o.samples {
            self.samples = Some(p.clone());
        }
        if let Some(p) = &o.output {
            self.output = p.clone();
        }
        if let Some(y) = o.measurement_year {
            self.measurement_year = y;
        }
        if let Some(y) = o.y_min {
            self.y_min = y;
        }
        if let Some(s) = &o.sites {
            self.sites = s.clone();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.y_min > self.measurement_year {
            bail!("y_min {} is after measurement_year {}", self.y_min, self.measurement_year);
        }
        if self.bootstrap_replicates < 1 {
            bail!("bootstrap_replicates must be at least 1");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            bail!("level must lie in (0, 1), got {}", self.level);
        }
        if !(self.lowess_fraction > 0.0 && self.lowess_fraction <= 1.0) {
            bail!("lowess_fraction must lie in (0, 1], got {}", self.lowess_fraction);
        }
        if !self.synthetic_exposures && (self.paint_series.is_none() || self.gas_series.is_none()) {
            bail!("set paint_series and gas_series, or synthetic_exposures = true");
        }
        Ok(())
    }

    pub fn year_distribution(&self) -> Result<YearDistribution> {
        Ok(match self.sim_years.as_str() {
            "uniform" => YearDistribution::Uniform,
            "mn_like" => YearDistribution::MnLike,
            "us_like" => YearDistribution::UsLike,
            other => bail!("sim_years must be uniform, mn_like or us_like, got {other:?}"),
        })
    }

    /// `None` when the measurement-error extension is switched off.
    pub fn error_config(&self) -> Option<ErrorConfig> {
        let e = ErrorConfig {
            epsilon_mean: self.sim_epsilon_mean,
            epsilon_sd: self.sim_epsilon_sd,
            shared: self.sim_shared_errors,
            delta_sd: self.sim_delta_sd,
        };
        (e != ErrorConfig::default()).then_some(e)
    }
}
