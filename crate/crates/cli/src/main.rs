use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use apportion_cli::bundle::Bundle;
use apportion_cli::config::{Overrides, RunConfig, SEED_ENV};
use apportion_cli::pipeline::{self as p};
use apportion_core::dataset::SiteType;
use clap::{Args, Parser, Subcommand};

/// Source apportionment of residential soil lead among background, paint and
/// gasoline.
///
/// Every subcommand reads a flat TOML config; flags override it, and the
/// APPORTION_SEED environment variable overrides the configured seed (a
/// --seed flag still wins). Outputs go to a directory that is staged as
/// `<out>.partial` and renamed only when every file has been written.
#[derive(Parser)]
#[command(name = "apportion", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply series policies, impute, and write cumulative exposures.
    BuildExposure(Common),
    /// Fit the model; writes fit.json and exclusions.csv.
    Fit(Common),
    /// Fit and residual-bootstrap; writes fit.json and bootstrap.json.
    Bootstrap(Common),
    /// Profile-likelihood intervals; writes profile_<param>.{csv,json}.
    Profile(Common),
    /// Fractional contributions by year built; writes efc_curve.csv.
    Apportion(Common),
    /// Regression diagnostics; writes diagnostics.json and plot data.
    Diagnose(Common),
    /// Simulate a samples file from the sim_* settings.
    Simulate(Common),
    /// The full pipeline.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap replicates B.
    #[arg(short = 'B', long)]
    replicates: Option<usize>,
    /// Confidence level for profile intervals.
    #[arg(long)]
    level: Option<f64>,
    /// Samples CSV (id,year_built,concentration,site_type).
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    measurement_year: Option<i32>,
    #[arg(long)]
    y_min: Option<i32>,
    /// Site types to fit, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_site)]
    sites: Option<Vec<SiteType>>,
}

fn parse_site(s: &str) -> Result<SiteType, String> {
    s.parse().map_err(|e: apportion_core::Error| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let overrides = Overrides {
            seed: self.seed,
            replicates: self.replicates,
            level: self.level,
            samples: self.samples.clone(),
            output: self.out.clone(),
            measurement_year: self.measurement_year,
            y_min: self.y_min,
            sites: self.sites.clone(),
        };
        let env_seed = std::env::var(SEED_ENV).ok();
        cfg.apply(&overrides, env_seed.as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cmd: &Command) -> Result<PathBuf> {
    let common = match cmd {
        Command::BuildExposure(c)
        | Command::Fit(c)
        | Command::Bootstrap(c)
        | Command::Profile(c)
        | Command::Apportion(c)
        | Command::Diagnose(c)
        | Command::Simulate(c)
        | Command::Run(c) => c,
    };
    let cfg = common.resolve()?;
    let bundle = Bundle::create(&cfg.output)?;
    let exp = p::build_exposures(&cfg)?;
    match cmd {
        Command::BuildExposure(_) => p::write_exposures(&bundle, &exp)?,
        Command::Simulate(_) => {
            let ds = p::simulate_stage(&cfg, &exp)?;
            p::write_simulation(&bundle, &ds, &cfg)?;
        }
        Command::Run(_) => p::run_pipeline(&cfg, &bundle)?,
        _ => {
            let data = p::ingest(&cfg, &exp)?;
            let f = p::fit_stage(&data)?;
            p::write_fit(&bundle, &f, &data)?;
            match cmd {
                Command::Bootstrap(_) => {
                    let b = p::bootstrap_stage(&f, &data, &cfg)?;
                    p::write_bootstrap(&bundle, &f, &b)?;
                }
                Command::Profile(_) => {
                    let iv = p::profile_stage(&f, &data, &cfg)?;
                    p::write_profiles(&bundle, &f, &iv)?;
                }
                Command::Apportion(_) => {
                    let b = p::bootstrap_stage(&f, &data, &cfg)?;
                    let (curve, crossings) = p::apportion_stage(&f, &exp, Some(&b))?;
                    p::write_apportionment(&bundle, &curve, &crossings)?;
                }
                Command::Diagnose(_) => {
                    let opts = p::bootstrap_options(&cfg);
                    let b = p::bootstrap_stage(&f, &data, &cfg)?;
                    let report = p::diagnose_stage(&f, &data, Some((&b, &opts)))?;
                    p::write_diagnostics(&bundle, &f, &data, &report, &cfg)?;
                }
                _ => {}
            }
        }
    }
    bundle.finish().context("finalizing output directory")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
