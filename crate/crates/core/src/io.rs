//! CSV and JSON file formats.
//!
//! | file | header |
//! |------|--------|
//! | yearly series | `year,amount` (empty amount = missing) |
//! | cumulative exposure | `year,cumulative` |
//! | samples | `id,year_built,concentration,site_type` |
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write followed by a read reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::dataset::{Exclusion, SampleRecord, SiteType};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::series::{CumulativeExposure, YearlySeries};

fn parse_err(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(rdr)
}

fn check_header(path: &str, rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn records<'a, R: Read>(
    path: &str,
    rdr: &'a mut csv::Reader<R>,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + 'a {
    let path = path.to_string();
    rdr.records().map(move |r| {
        r.map(|rec| (rec.position().map_or(0, |p| p.line()), rec))
            .map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(&path, line, e.to_string())
            })
    })
}

fn parse_num<T: Scalar>(path: &str, line: u64, field: &str, what: &str) -> Result<T> {
    field
        .parse::<f64>()
        .map(T::lit)
        .map_err(|_| parse_err(path, line, format!("{what}: cannot parse '{field}' as a number")))
}

fn parse_year(path: &str, line: u64, field: &str) -> Result<i32> {
    field
        .parse::<i32>()
        .map_err(|_| parse_err(path, line, format!("year: cannot parse '{field}' as an integer")))
}

pub fn read_series<T: Scalar, R: Read>(path_label: &str, rdr: R) -> Result<YearlySeries<T>> {
    let mut rdr = reader(rdr);
    check_header(path_label, &mut rdr, &["year", "amount"])?;
    let mut pairs = Vec::new();
    for row in records(path_label, &mut rdr) {
        let (line, rec) = row?;
        let year = parse_year(path_label, line, &rec[0])?;
        let amount = if rec[1].is_empty() {
            None
        } else {
            Some(parse_num::<T>(path_label, line, &rec[1], "amount")?)
        };
        pairs.push((year, amount));
    }
    YearlySeries::from_pairs(&pairs).map_err(|e| parse_err(path_label, 0, e.to_string()))
}

pub fn read_series_file<T: Scalar>(path: &Path) -> Result<YearlySeries<T>> {
    read_series(&path.display().to_string(), File::open(path)?)
}

pub fn write_series<T: Scalar, W: Write>(w: W, series: &YearlySeries<T>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["year", "amount"])?;
    for (year, v) in series.iter() {
        let amount = v.map(|x| x.to_string()).unwrap_or_default();
        wtr.write_record([year.to_string(), amount])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_exposure<T: Scalar, W: Write>(w: W, exposure: &CumulativeExposure<T>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["year", "cumulative"])?;
    for (year, c) in exposure.iter() {
        wtr.write_record([year.to_string(), c.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_exposure<T: Scalar, R: Read>(path_label: &str, rdr: R) -> Result<CumulativeExposure<T>> {
    let mut rdr = reader(rdr);
    check_header(path_label, &mut rdr, &["year", "cumulative"])?;
    let mut pairs = Vec::new();
    for row in records(path_label, &mut rdr) {
        let (line, rec) = row?;
        pairs.push((
            parse_year(path_label, line, &rec[0])?,
            parse_num::<T>(path_label, line, &rec[1], "cumulative")?,
        ));
    }
    CumulativeExposure::from_pairs(&pairs).map_err(|e| parse_err(path_label, 0, e.to_string()))
}

pub fn read_exposure_file<T: Scalar>(path: &Path) -> Result<CumulativeExposure<T>> {
    read_exposure(&path.display().to_string(), File::open(path)?)
}

/// Reads the samples file. Nonpositive concentrations are kept here and
/// excluded (with a reason) at join time; malformed rows are errors.
pub fn read_samples<T: Scalar, R: Read>(path_label: &str, rdr: R) -> Result<Vec<SampleRecord<T>>> {
    let mut rdr = reader(rdr);
    check_header(path_label, &mut rdr, &["id", "year_built", "concentration", "site_type"])?;
    let mut out = Vec::new();
    for row in records(path_label, &mut rdr) {
        let (line, rec) = row?;
        let site_type = rec[3]
            .parse::<SiteType>()
            .map_err(|e| parse_err(path_label, line, e.to_string()))?;
        if rec[0].is_empty() {
            return Err(parse_err(path_label, line, "empty sample id"));
        }
        out.push(SampleRecord {
            id: rec[0].to_string(),
            year_built: parse_year(path_label, line, &rec[1])?,
            concentration: parse_num::<T>(path_label, line, &rec[2], "concentration")?,
            site_type,
        });
    }
    if out.is_empty() {
        return Err(parse_err(path_label, 1, "samples file contains no records"));
    }
    Ok(out)
}

pub fn read_samples_file<T: Scalar>(path: &Path) -> Result<Vec<SampleRecord<T>>> {
    read_samples(&path.display().to_string(), File::open(path)?)
}

pub fn write_samples<T: Scalar, W: Write>(w: W, records: &[SampleRecord<T>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["id", "year_built", "concentration", "site_type"])?;
    for r in records {
        wtr.write_record([
            r.id.clone(),
            r.year_built.to_string(),
            r.concentration.to_string(),
            r.site_type.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_exclusions<W: Write>(w: W, exclusions: &[Exclusion]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["id", "year_built", "site_type", "reason"])?;
    for e in exclusions {
        wtr.write_record([
            e.id.clone(),
            e.year_built.to_string(),
            e.site_type.to_string(),
            e.reason.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes a CSV with the given header from rows of already-formatted cells.
pub fn write_table<W: Write>(w: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_json<S: Serialize, W: Write>(w: W, value: &S) -> Result<()> {
    let mut w = BufWriter::new(w);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
