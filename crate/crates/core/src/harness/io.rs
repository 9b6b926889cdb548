//! CSV input and output.
//!
//! Data files carry a header row and the columns `y`, `d`, one column per
//! covariate, `s1`, `deg1`, `s2`, `deg2` and optionally `cluster_id`.
//! Row numbers in errors count data rows from 1.

use std::io::{Read, Write};
use std::path::Path;

use super::montecarlo::McSummary;
use crate::data::{Covariate, DepNeighborhoods, Sample};
use crate::error::{Error, Result};
use crate::estim::effects::EffectEstimate;
use crate::estim::fit::ThetaFit;

const FIXED: [&str; 6] = ["y", "d", "s1", "deg1", "s2", "deg2"];
const CLUSTER: &str = "cluster_id";

/// Covariate columns of a data file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub covariates: Vec<Covariate>,
}

impl CsvSchema {
    /// Every column besides the fixed ones is a covariate; those named in
    /// `continuous` are smoothed, the rest matched exactly.
    pub fn infer(headers: &[String], continuous: &[String]) -> Self {
        let covariates = headers
            .iter()
            .filter(|h| !FIXED.contains(&h.as_str()) && h.as_str() != CLUSTER)
            .map(|h| if continuous.contains(h) { Covariate::continuous(h) } else { Covariate::discrete(h) })
            .collect();
        CsvSchema { covariates }
    }
}

/// Trimmed header names of a data file.
pub fn read_headers(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::Io(e.to_string()))?;
    Ok(headers.iter().map(|h| h.trim().to_string()).collect())
}

fn column(headers: &[String], name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
        row: 0,
        column: name.to_string(),
        msg: "missing column".into(),
    })
}

fn parse<T: std::str::FromStr>(field: &str, row: usize, col: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Schema {
        row,
        column: col.to_string(),
        msg: format!("cannot parse '{field}'"),
    })
}

/// Reads a data file. Without a schema, all extra columns are discrete
/// covariates. Neighborhoods are the `cluster_id` blocks when present.
pub fn ingest_reader<R: Read>(reader: R, schema: Option<&CsvSchema>) -> Result<(Sample, Option<DepNeighborhoods>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let schema = match schema {
        Some(s) => s.clone(),
        None => CsvSchema::infer(&headers, &[]),
    };
    let idx: Vec<usize> = FIXED.iter().map(|c| column(&headers, c)).collect::<Result<_>>()?;
    let zcols: Vec<usize> = schema.covariates.iter().map(|c| column(&headers, &c.name)).collect::<Result<_>>()?;
    let ccol = headers.iter().position(|h| h == CLUSTER);
    let mut s = Sample {
        y: Vec::new(),
        d: Vec::new(),
        covariates: schema.covariates.clone(),
        z: Vec::new(),
        s1: Vec::new(),
        deg1: Vec::new(),
        s2: Vec::new(),
        deg2: Vec::new(),
        positions: None,
        cluster: ccol.map(|_| Vec::new()),
    };
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Schema { row, column: String::new(), msg: e.to_string() })?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let y: f64 = parse(field(0), row, "y")?;
        if !y.is_finite() {
            return Err(Error::Integrity { row, msg: "outcome is not finite".into() });
        }
        let d: f64 = parse(field(1), row, "d")?;
        if d != 0.0 && d != 1.0 {
            return Err(Error::Integrity { row, msg: format!("treatment d={d} is not binary") });
        }
        let nums: Vec<u32> = (2..6).map(|k| parse(field(k), row, FIXED[k])).collect::<Result<_>>()?;
        let (s1, deg1, s2, deg2) = (nums[0], nums[1], nums[2], nums[3]);
        if s1 > deg1 {
            return Err(Error::Integrity { row, msg: format!("s1={s1} exceeds deg1={deg1}") });
        }
        if s2 > deg2 {
            return Err(Error::Integrity { row, msg: format!("s2={s2} exceeds deg2={deg2}") });
        }
        let z: Vec<f64> = zcols
            .iter()
            .zip(&schema.covariates)
            .map(|(&c, cov)| parse(rec.get(c).unwrap_or(""), row, &cov.name))
            .collect::<Result<_>>()?;
        s.y.push(y);
        s.d.push(d as u8);
        s.z.push(z);
        s.s1.push(s1);
        s.deg1.push(deg1);
        s.s2.push(s2);
        s.deg2.push(deg2);
        if let (Some(c), Some(v)) = (ccol, s.cluster.as_mut()) {
            v.push(rec.get(c).unwrap_or("").trim().to_string());
        }
    }
    if s.is_empty() {
        return Err(Error::EmptySample);
    }
    s.validate()?;
    let nbrs = s.cluster.as_ref().map(|c| DepNeighborhoods::from_clusters(c));
    Ok((s, nbrs))
}

pub fn ingest_csv(path: &Path, schema: Option<&CsvSchema>) -> Result<(Sample, Option<DepNeighborhoods>)> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

/// Writes a sample in the ingest format.
pub fn write_sample<W: Write>(sample: &Sample, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = vec!["y".into(), "d".into()];
    header.extend(sample.covariates.iter().map(|c| c.name.clone()));
    header.extend(["s1", "deg1", "s2", "deg2"].map(String::from));
    if sample.cluster.is_some() {
        header.push(CLUSTER.into());
    }
    wtr.write_record(&header)?;
    for i in 0..sample.len() {
        let mut rec = vec![sample.y[i].to_string(), sample.d[i].to_string()];
        rec.extend(sample.z[i].iter().map(f64::to_string));
        rec.extend([sample.s1[i], sample.deg1[i], sample.s2[i], sample.deg2[i]].map(|v| v.to_string()));
        if let Some(c) = &sample.cluster {
            rec.push(c[i].clone());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn export_sample(sample: &Sample, path: &Path) -> Result<()> {
    write_sample(sample, std::fs::File::create(path)?)
}

/// One row per (estimator, effect): truth, bias, sd, mse, coverage, reps.
pub fn write_summary<W: Write>(summary: &McSummary, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["estimator", "effect", "truth", "bias", "sd", "mse", "cr", "reps"])?;
    for r in &summary.rows {
        wtr.write_record([
            r.estimator.tag().to_string(),
            r.effect.clone(),
            r.truth.to_string(),
            r.bias.to_string(),
            r.sd.to_string(),
            r.mse.to_string(),
            r.coverage.to_string(),
            r.reps.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Raw per-replication estimates; excluded replications carry the reason.
pub fn write_replications<W: Write>(summary: &McSummary, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["rep", "seed", "estimator", "effect", "estimate", "std_error", "excluded"])?;
    for r in &summary.replications {
        match &r.outcome {
            Ok(runs) => {
                for run in runs {
                    for e in &run.estimates {
                        wtr.write_record([
                            r.rep.to_string(),
                            r.seed.to_string(),
                            run.estimator.tag().to_string(),
                            e.query.label(),
                            e.value.to_string(),
                            e.std_error.to_string(),
                            String::new(),
                        ])?;
                    }
                }
            }
            Err(reason) => {
                let (rep, seed) = (r.rep.to_string(), r.seed.to_string());
                wtr.write_record([rep.as_str(), seed.as_str(), "", "", "", "", reason.as_str()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_effects<W: Write>(estimates: &[EffectEstimate], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["effect", "estimate", "std_error"])?;
    for e in estimates {
        wtr.write_record([e.query.label(), e.value.to_string(), e.std_error.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_fit<W: Write>(fit: &ThetaFit, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["param", "estimate", "std_error"])?;
    let se = fit.std_errors();
    for (k, name) in fit.names.iter().enumerate() {
        let s = se.as_ref().map_or(f64::NAN, |v| v[k]);
        wtr.write_record([name.clone(), fit.theta[k].to_string(), s.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn to_file(path: &Path, f: impl FnOnce(std::fs::File) -> Result<()>) -> Result<()> {
    f(std::fs::File::create(path)?)
}

pub fn export_summary(summary: &McSummary, path: &Path) -> Result<()> {
    to_file(path, |f| write_summary(summary, f))
}

pub fn export_effects(estimates: &[EffectEstimate], path: &Path) -> Result<()> {
    to_file(path, |f| write_effects(estimates, f))
}

pub fn export_fit(fit: &ThetaFit, path: &Path) -> Result<()> {
    to_file(path, |f| write_fit(fit, f))
}
