//! Pipeline stages and the files each one writes.

use std::io::Write;

use anyhow::{bail, Context, Result};
use apportion_core::apportion::{crossing_years, efc_curve, ApportionmentCurve, Component, Crossing};
use apportion_core::dataset::{join, Dataset, Exclusion, SiteType};
use apportion_core::diagnostics::{diagnose, lowess_at, marginal_plot_data, DiagnoseInputs, DiagnosticsReport, MarginalAxis};
use apportion_core::estimator::{fit, FitOptions, FitReport, FitResult};
use apportion_core::inference::{
    asymptotic_se, profile_interval, residual_bootstrap, BootstrapOptions, BootstrapResult, ProfileInterval,
    VarianceEstimate,
};
use apportion_core::io;
use apportion_core::model::{linear_predictor, DesignPoint, Param, Theta};
use apportion_core::scalar::sample_sd;
use apportion_core::series::{apply_policy, cumulate, impute_proportional, CumulativeExposure, SeriesPolicy, YearlySeries};
use apportion_core::simulator::{presets, simulate, SimConfig};
use apportion_core::SCHEMA_VERSION;
use serde::Serialize;

use crate::bundle::Bundle;
use crate::config::RunConfig;

/// Robustness passes for the lowess of log concentration on year built.
const LOWESS_ITERATIONS: usize = 3;

pub struct Exposures {
    pub paint: CumulativeExposure<f64>,
    pub gas: CumulativeExposure<f64>,
    pub imputation: Option<ImputationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImputationSummary {
    pub slope: f64,
    pub r_squared: f64,
    pub fit_window: [i32; 2],
    pub imputed_years: Vec<i32>,
}

fn read_series(path: &std::path::Path) -> Result<YearlySeries<f64>> {
    io::read_series_file(path).with_context(|| format!("reading series {}", path.display()))
}

/// Reads (or synthesizes) both consumption series, applies their policies,
/// imputes missing gasoline years if configured, and cumulates.
pub fn build_exposures(cfg: &RunConfig) -> Result<Exposures> {
    let (paint_raw, gas_raw) = if cfg.synthetic_exposures {
        (presets::paint_series(), presets::gas_series())
    } else {
        let p = cfg.paint_series.as_deref().context("paint_series not set")?;
        let g = cfg.gas_series.as_deref().context("gas_series not set")?;
        (read_series(p)?, read_series(g)?)
    };
    let paint_policy = SeriesPolicy::new(cfg.paint_zero_before, cfg.paint_zero_after, cfg.paint_scale)?;
    let gas_policy = SeriesPolicy::new(cfg.gas_zero_before, cfg.gas_zero_after, cfg.gas_scale)?;
    let paint = apply_policy(&paint_raw, &paint_policy);
    let mut gas = apply_policy(&gas_raw, &gas_policy);
    let mut imputation = None;
    if let Some(refpath) = &cfg.gas_impute_reference {
        let (Some(from), Some(to)) = (cfg.gas_impute_from, cfg.gas_impute_to) else {
            bail!("gas_impute_reference needs gas_impute_from and gas_impute_to");
        };
        let reference = read_series(refpath)?;
        let r = impute_proportional(&gas, &reference, from..=to)?;
        imputation = Some(ImputationSummary {
            slope: r.slope,
            r_squared: r.r_squared,
            fit_window: [from, to],
            imputed_years: r.imputed_years.clone(),
        });
        gas = r.filled;
    }
    Ok(Exposures {
        paint: cumulate(&paint, cfg.measurement_year, cfg.y_min).context("cumulating paint series")?,
        gas: cumulate(&gas, cfg.measurement_year, cfg.y_min).context("cumulating gasoline series")?,
        imputation,
    })
}

pub fn write_exposures(bundle: &Bundle, exp: &Exposures) -> Result<()> {
    io::write_exposure(bundle.file("paint_exposure.csv")?, &exp.paint)?;
    io::write_exposure(bundle.file("gas_exposure.csv")?, &exp.gas)?;
    if let Some(imp) = &exp.imputation {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema_version: u32,
            #[serde(flatten)]
            imputation: &'a ImputationSummary,
        }
        io::write_json(bundle.file("imputation.json")?, &Doc { schema_version: SCHEMA_VERSION, imputation: imp })?;
    }
    Ok(())
}

pub struct Ingested {
    pub dataset: Dataset<f64>,
    pub exclusions: Vec<Exclusion>,
    /// Concentrations from reference (background) sites, in file order.
    pub reference: Vec<f64>,
    pub records: usize,
}

impl Ingested {
    pub fn points(&self) -> Vec<DesignPoint<f64>> {
        self.dataset.points()
    }

    pub fn ids(&self) -> Vec<String> {
        self.dataset.samples.iter().map(|s| s.id.clone()).collect()
    }
}

/// Joins the samples file onto the exposures. Every record is either
/// retained or logged as excluded.
pub fn ingest(cfg: &RunConfig, exp: &Exposures) -> Result<Ingested> {
    let path = cfg.samples.as_deref().context("samples not set")?;
    let records = io::read_samples_file::<f64>(path)?;
    let reference = records
        .iter()
        .filter(|r| cfg.reference_sites.contains(&r.site_type) && r.concentration > 0.0)
        .map(|r| r.concentration)
        .collect();
    let sites: Option<&[SiteType]> = (!cfg.sites.is_empty()).then_some(&cfg.sites[..]);
    let (dataset, exclusions) = join(&records, &exp.paint, &exp.gas, sites);
    if dataset.len() < 4 {
        bail!(
            "{} of {} samples remain after exclusions; at least 4 are needed",
            dataset.len(),
            records.len()
        );
    }
    Ok(Ingested {
        dataset,
        exclusions,
        reference,
        records: records.len(),
    })
}

pub fn fit_stage(data: &Ingested) -> Result<FitResult<f64>> {
    Ok(fit(&data.points(), &FitOptions::default())?)
}

#[derive(Serialize)]
struct FitDocument {
    #[serde(flatten)]
    report: FitReport,
    se_df_corrected: [f64; 3],
    samples_read: usize,
    samples_excluded: usize,
}

pub fn write_fit(bundle: &Bundle, f: &FitResult<f64>, data: &Ingested) -> Result<()> {
    let doc = FitDocument {
        report: f.report(),
        se_df_corrected: asymptotic_se(f, VarianceEstimate::DfCorrected)?.se,
        samples_read: data.records,
        samples_excluded: data.exclusions.len(),
    };
    io::write_json(bundle.file("fit.json")?, &doc)?;
    io::write_exclusions(bundle.file("exclusions.csv")?, &data.exclusions)?;
    Ok(())
}

pub fn bootstrap_options(cfg: &RunConfig) -> BootstrapOptions {
    BootstrapOptions {
        replicates: cfg.bootstrap_replicates,
        seed: cfg.seed,
        studentized: cfg.studentized_bootstrap,
        ..Default::default()
    }
}

pub fn bootstrap_stage(f: &FitResult<f64>, data: &Ingested, cfg: &RunConfig) -> Result<BootstrapResult<f64>> {
    Ok(residual_bootstrap(f, &data.points(), &bootstrap_options(cfg))?)
}

pub fn write_bootstrap(bundle: &Bundle, f: &FitResult<f64>, b: &BootstrapResult<f64>) -> Result<()> {
    #[derive(Serialize)]
    struct Doc<'a> {
        schema_version: u32,
        asymptotic_se: [f64; 3],
        /// Bootstrap SE over asymptotic SE; absent where the latter is 0.
        se_ratio: [Option<f64>; 3],
        #[serde(flatten)]
        result: &'a BootstrapResult<f64>,
    }
    let asy = asymptotic_se(f, VarianceEstimate::MaximumLikelihood)?.se;
    let se_ratio = [0, 1, 2].map(|k| (asy[k] > 0.0).then(|| b.se_theta[k] / asy[k]));
    io::write_json(
        bundle.file("bootstrap.json")?,
        &Doc { schema_version: SCHEMA_VERSION, asymptotic_se: asy, se_ratio, result: b },
    )?;
    Ok(())
}

pub fn profile_stage(f: &FitResult<f64>, data: &Ingested, cfg: &RunConfig) -> Result<Vec<ProfileInterval<f64>>> {
    let points = data.points();
    Param::ALL
        .iter()
        .filter(|p| !f.unidentified.contains(p))
        .map(|&p| Ok(profile_interval(f, &points, p, cfg.level)?))
        .collect()
}

pub fn write_profiles(bundle: &Bundle, f: &FitResult<f64>, intervals: &[ProfileInterval<f64>]) -> Result<()> {
    #[derive(Serialize)]
    struct Doc<'a> {
        schema_version: u32,
        wald: [f64; 2],
        #[serde(flatten)]
        interval: &'a ProfileInterval<f64>,
    }
    let se = asymptotic_se(f, VarianceEstimate::MaximumLikelihood)?.se;
    for iv in intervals {
        let name = iv.parameter.name();
        let rows = iv.trace.iter().map(|t| {
            vec![t.value.to_string(), t.profile_loglik.to_string(), t.signed_root.to_string()]
        });
        io::write_table(bundle.file(&format!("profile_{name}.csv"))?, &["value", "profile_loglik", "signed_root"], rows)?;
        // the χ²₁ cutoff is the squared normal quantile
        let z = iv.cutoff.sqrt();
        let k = iv.parameter.index();
        let wald = [iv.estimate - z * se[k], iv.estimate + z * se[k]];
        io::write_json(
            bundle.file(&format!("profile_{name}.json"))?,
            &Doc { schema_version: SCHEMA_VERSION, wald, interval: iv },
        )?;
    }
    Ok(())
}

pub fn apportion_stage(
    f: &FitResult<f64>,
    exp: &Exposures,
    b: Option<&BootstrapResult<f64>>,
) -> Result<(ApportionmentCurve<f64>, Vec<Crossing>)> {
    let curve = efc_curve(f, &exp.paint, &exp.gas, b)?;
    let crossings = crossing_years(&curve);
    Ok((curve, crossings))
}

pub fn write_apportionment(bundle: &Bundle, curve: &ApportionmentCurve<f64>, crossings: &[Crossing]) -> Result<()> {
    io::write_table(
        bundle.file("efc_curve.csv")?,
        &ApportionmentCurve::<f64>::CSV_HEADER,
        curve.rows(false),
    )?;
    #[derive(Serialize)]
    struct Doc<'a> {
        schema_version: u32,
        crossings: &'a [Crossing],
    }
    io::write_json(bundle.file("crossings.json")?, &Doc { schema_version: SCHEMA_VERSION, crossings })?;

    // plot data: fractions with ±1 SD bands, clipped to [0, 1] for display
    let clip = |v: f64| v.clamp(0.0, 1.0);
    let header = [
        "year",
        "background",
        "background_lo",
        "background_hi",
        "paint",
        "paint_lo",
        "paint_hi",
        "gas",
        "gas_lo",
        "gas_hi",
    ];
    let rows = (0..curve.years.len()).map(|i| {
        let mut row = vec![curve.years[i].to_string()];
        for c in Component::ALL {
            let v = curve.component(c)[i];
            let band = curve.bands.as_ref().map(|b| match c {
                Component::Background => b.background[i],
                Component::Paint => b.paint[i],
                Component::Gas => b.gas[i],
            });
            row.push(clip(v).to_string());
            match band {
                Some(s) => {
                    row.push(clip(v - s).to_string());
                    row.push(clip(v + s).to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        row
    });
    io::write_table(bundle.file("plotdata/efc_bands.csv")?, &header, rows)?;
    Ok(())
}

pub fn diagnose_stage(
    f: &FitResult<f64>,
    data: &Ingested,
    b: Option<(&BootstrapResult<f64>, &BootstrapOptions)>,
) -> Result<DiagnosticsReport<f64>> {
    let ids = data.ids();
    let inputs = DiagnoseInputs {
        ids: Some(&ids),
        bootstrap: b,
        reference: Some(&data.reference),
    };
    Ok(diagnose(f, &data.points(), &inputs)?)
}

pub fn write_diagnostics(
    bundle: &Bundle,
    f: &FitResult<f64>,
    data: &Ingested,
    report: &DiagnosticsReport<f64>,
    cfg: &RunConfig,
) -> Result<()> {
    io::write_json(bundle.file("diagnostics.json")?, report)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let rows = report.samples.iter().map(|s| {
        vec![
            s.id.clone(),
            s.year_built.to_string(),
            s.residual.to_string(),
            opt(s.student_t),
            opt(s.bonferroni_p),
            s.leverage.to_string(),
            opt(s.cooks_d),
        ]
    });
    io::write_table(
        bundle.file("diagnostics_samples.csv")?,
        &["id", "year_built", "residual", "student_t", "bonferroni_p", "leverage", "cooks_d"],
        rows,
    )?;
    let points = data.points();
    for axis in MarginalAxis::ALL {
        let m = marginal_plot_data(f, &points, axis, cfg.lowess_fraction, cfg.marginal_grid)?;
        let rows = (0..m.grid.len()).map(|i| {
            vec![
                m.grid[i].to_string(),
                m.data_smooth[i].to_string(),
                m.model_smooth[i].to_string(),
                m.band[i].to_string(),
            ]
        });
        io::write_table(
            bundle.file(&format!("plotdata/marginal_{}.csv", axis.name()))?,
            &["x", "data_smooth", "model_smooth", "band"],
            rows,
        )?;
    }
    Ok(())
}

/// Year-built plot data: the samples on the log scale, and by year the fitted
/// log mean, its bootstrap SE, and a lowess of the data against year built.
pub fn write_year_plot(
    bundle: &Bundle,
    f: &FitResult<f64>,
    data: &Ingested,
    exp: &Exposures,
    b: Option<&BootstrapResult<f64>>,
    cfg: &RunConfig,
) -> Result<()> {
    let points = data.points();
    let fitted = f.fitted_log(&points);
    let rows = data.dataset.samples.iter().zip(&fitted).map(|(s, fl)| {
        vec![
            s.id.clone(),
            s.point.year_built.to_string(),
            s.point.log_concentration.to_string(),
            fl.to_string(),
        ]
    });
    io::write_table(
        bundle.file("plotdata/samples_by_year.csv")?,
        &["id", "year_built", "log_concentration", "fitted_log"],
        rows,
    )?;

    let x: Vec<f64> = points.iter().map(|p| p.year_built as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.log_concentration).collect();
    let lo = points.iter().map(|p| p.year_built).min().expect("nonempty");
    let hi = points.iter().map(|p| p.year_built).max().expect("nonempty");
    let at: Vec<f64> = (lo..=hi).map(f64::from).collect();
    let smooth = lowess_at(&x, &y, &at, cfg.lowess_fraction, LOWESS_ITERATIONS)?;
    let log_eta = |theta: &Theta<f64>, year: i32| {
        let t = exp.paint.get(year).expect("year in domain");
        let g = exp.gas.get(year).expect("year in domain");
        linear_predictor(theta, t, g).ln()
    };
    let rows = exp.paint.years().map(|year| {
        let mu = log_eta(&f.theta, year);
        let se = b.map(|b| sample_sd(&b.replicates.iter().map(|r| log_eta(&r.theta, year)).collect::<Vec<_>>()));
        let sm = if (lo..=hi).contains(&year) {
            smooth.fitted[(year - lo) as usize].to_string()
        } else {
            String::new()
        };
        let (se_s, lo_s, hi_s) = match se {
            Some(s) => (s.to_string(), (mu - s).to_string(), (mu + s).to_string()),
            None => Default::default(),
        };
        vec![year.to_string(), mu.to_string(), se_s, lo_s, hi_s, sm]
    });
    io::write_table(
        bundle.file("plotdata/fitted_by_year.csv")?,
        &["year", "fitted_log", "bootstrap_se", "fitted_lo", "fitted_hi", "lowess"],
        rows,
    )?;
    Ok(())
}

pub fn simulation_config(cfg: &RunConfig, exp: &Exposures) -> Result<SimConfig<f64>> {
    Ok(SimConfig {
        theta: Theta::new(cfg.sim_background, cfg.sim_paint_rate, cfg.sim_gas_rate),
        sigma: cfg.sim_sigma,
        paint: exp.paint.clone(),
        gas: exp.gas.clone(),
        years: cfg.year_distribution()?,
        n: cfg.sim_n,
        seed: cfg.seed,
        site_type: cfg.sim_site_type,
    })
}

pub fn simulate_stage(cfg: &RunConfig, exp: &Exposures) -> Result<Dataset<f64>> {
    let sim = simulation_config(cfg, exp)?;
    Ok(simulate(&sim, cfg.error_config().as_ref())?)
}

pub fn write_simulation(bundle: &Bundle, ds: &Dataset<f64>, cfg: &RunConfig) -> Result<()> {
    io::write_samples(bundle.file("samples.csv")?, &ds.to_records())?;
    #[derive(Serialize)]
    struct Doc {
        schema_version: u32,
        seed: u64,
        n: usize,
        theta: [f64; 3],
        sigma: f64,
        years: String,
        error: Option<apportion_core::simulator::ErrorConfig>,
    }
    io::write_json(
        bundle.file("simulation.json")?,
        &Doc {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            n: ds.len(),
            theta: [cfg.sim_background, cfg.sim_paint_rate, cfg.sim_gas_rate],
            sigma: cfg.sim_sigma,
            years: cfg.sim_years.clone(),
            error: cfg.error_config(),
        },
    )?;
    Ok(())
}

/// Runs every stage and writes the full bundle.
pub fn run_pipeline(cfg: &RunConfig, bundle: &Bundle) -> Result<()> {
    let exp = build_exposures(cfg)?;
    write_exposures(bundle, &exp)?;
    let data = ingest(cfg, &exp)?;
    let f = fit_stage(&data)?;
    write_fit(bundle, &f, &data)?;
    let opts = bootstrap_options(cfg);
    let b = bootstrap_stage(&f, &data, cfg)?;
    write_bootstrap(bundle, &f, &b)?;
    let profiles = profile_stage(&f, &data, cfg)?;
    write_profiles(bundle, &f, &profiles)?;
    let (curve, crossings) = apportion_stage(&f, &exp, Some(&b))?;
    write_apportionment(bundle, &curve, &crossings)?;
    let report = diagnose_stage(&f, &data, Some((&b, &opts)))?;
    write_diagnostics(bundle, &f, &data, &report, cfg)?;
    write_year_plot(bundle, &f, &data, &exp, Some(&b), cfg)?;
    write_manifest(bundle, cfg, &data)
}

pub fn write_manifest(bundle: &Bundle, cfg: &RunConfig, data: &Ingested) -> Result<()> {
    #[derive(Serialize)]
    struct Doc {
        schema_version: u32,
        tool_version: &'static str,
        seed: u64,
        bootstrap_replicates: usize,
        level: f64,
        measurement_year: i32,
        y_min: i32,
        samples_read: usize,
        samples_used: usize,
        samples_excluded: usize,
    }
    let mut w = bundle.file("run.json")?;
    io::write_json(
        &mut w,
        &Doc {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            bootstrap_replicates: cfg.bootstrap_replicates,
            level: cfg.level,
            measurement_year: cfg.measurement_year,
            y_min: cfg.y_min,
            samples_read: data.records,
            samples_used: data.dataset.len(),
            samples_excluded: data.exclusions.len(),
        },
    )?;
    w.flush()?;
    Ok(())
}
