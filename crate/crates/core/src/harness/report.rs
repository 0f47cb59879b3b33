//! JSON/CSV report writers and parameter sweeps.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{AttackSettings, DefenseConfig, ExperimentConfig};
use super::runner::{run_experiment, RunReport};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes `report.json` and a long-form `report.csv` (`seed,metric,value`,
/// one row per successful seed and metric) into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join("report.json");
    write_json(report, &json)?;
    let csv_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record(["seed", "metric", "value"]).map_err(csv_err)?;
    for s in report.seeds.iter().filter(|s| s.is_ok()) {
        for (metric, value) in &s.metrics {
            w.write_record([s.seed.to_string(), metric.clone(), format!("{value:?}")]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok((json, csv_path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    AuxSize,
    SoftLabelCount,
    Lambda,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::AuxSize => "aux_size",
            SweepAxis::SoftLabelCount => "soft_label_count",
            SweepAxis::Lambda => "lambda",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aux_size" => Ok(SweepAxis::AuxSize),
            "soft_label_count" => Ok(SweepAxis::SoftLabelCount),
            "lambda" => Ok(SweepAxis::Lambda),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (expected aux_size, soft_label_count or lambda)"
            ))),
        }
    }
}

fn positive_integer(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{} values must be positive integers, got {v}", axis.as_str())))
    }
}

/// `base` with one axis set to `value`. Fails when the axis does not apply.
pub fn apply_axis(base: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::AuxSize => {
            let n = positive_integer(axis, value)?;
            match &mut cfg.attack {
                AttackSettings::ModelCompletion { aux_size, .. } | AttackSettings::Extension { aux_size, .. } => {
                    *aux_size = n
                }
                AttackSettings::None => {
                    return Err(Error::Config("aux_size sweep needs an attack in the base config".into()))
                }
            }
        }
        SweepAxis::SoftLabelCount => {
            let n = positive_integer(axis, value)?;
            match &mut cfg.defense {
                DefenseConfig::Labobf { bins_per_class, thresholds, .. } => {
                    *bins_per_class = n;
                    *thresholds = None;
                }
                _ => return Err(Error::Config("soft_label_count sweep needs a labobf defense".into())),
            }
        }
        SweepAxis::Lambda => match &mut cfg.defense {
            DefenseConfig::Discorloss { lambda } => *lambda = value,
            _ => return Err(Error::Config("lambda sweep needs a discorloss defense".into())),
        },
    }
    cfg.output_dir = base.output_dir.join(format!("{}_{value}", axis.as_str()));
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

/// Runs `base` once per value along `axis`. All values are checked before
/// anything trains.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs: Vec<_> = values.iter().map(|&v| apply_axis(base, axis, v)).collect::<Result<_>>()?;
    let points = values
        .iter()
        .zip(&configs)
        .map(|(&value, cfg)| Ok(SweepPoint { value, report: run_experiment(cfg)? }))
        .collect::<Result<_>>()?;
    Ok(SweepReport { axis, points })
}

/// `sweep.json` plus `sweep.csv` with columns `<axis>,seed,metric,value`.
pub fn emit_sweep(report: &SweepReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join("sweep.json");
    write_json(report, &json)?;
    let csv_path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record([report.axis.as_str(), "seed", "metric", "value"]).map_err(csv_err)?;
    for p in &report.points {
        for s in p.report.seeds.iter().filter(|s| s.is_ok()) {
            for (metric, value) in &s.metrics {
                w.write_record([format!("{:?}", p.value), s.seed.to_string(), metric.clone(), format!("{value:?}")])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok((json, csv_path))
}
