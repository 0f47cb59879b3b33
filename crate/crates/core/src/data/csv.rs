//! CSV ingestion with a TOML column-role schema.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataSplits, SplitTag, VerticalDataset};
use crate::error::{Error, Result};
use crate::nd::Tensor2;

const SIGMA_FLOOR: f64 = 1e-12;

/// Column roles. Every header column must be named in exactly one list
/// unless `ignore_unlisted` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label: String,
    pub client: Vec<String>,
    pub host: Vec<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
    /// Raw label strings in class order. When absent, classes are the sorted
    /// distinct values found in the file.
    #[serde(default)]
    pub label_values: Option<Vec<String>>,
    /// Trailing fraction of rows held out for validation.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub ignore_unlisted: bool,
}

fn default_validation_fraction() -> f64 {
    0.2
}

impl CsvSchema {
    pub fn from_toml(text: &str) -> Result<CsvSchema> {
        let schema: CsvSchema = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        let all = std::iter::once(&self.label).chain(&self.client).chain(&self.host).chain(&self.ignore);
        for name in all {
            if seen.insert(name.as_str(), ()).is_some() {
                return Err(Error::Config(format!("column {name:?} assigned twice")));
            }
        }
        if self.client.is_empty() || self.host.is_empty() {
            return Err(Error::Config("both parties need at least one feature column".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Per-column train statistics used for z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub splits: DataSplits,
    pub client_stats: Vec<ColumnStats>,
    pub host_stats: Vec<ColumnStats>,
    pub label_values: Vec<String>,
}

fn parse_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse { row, column: column.to_string(), message: message.into() }
}

fn column_stats(name: &str, values: impl Iterator<Item = f64> + Clone) -> ColumnStats {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    ColumnStats { name: name.to_string(), mean, std: var.sqrt().max(SIGMA_FLOOR) }
}

fn normalize(raw: &[Vec<f64>], stats: &[ColumnStats], rows: std::ops::Range<usize>) -> Tensor2 {
    let r0 = rows.start;
    Tensor2::from_fn(rows.len(), stats.len(), |r, c| stats[c].apply(raw[r0 + r][c]))
}

/// Reads a headered CSV, assigns columns by `schema`, holds out the trailing
/// rows for validation and z-scores every feature with train statistics.
///
/// Rows with an empty cell are dropped with a warning; any other
/// non-numeric cell is a parse error. Row numbers in errors are 1-based file
/// lines, the header being line 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadedCsv> {
    schema.validate()?;
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_err(1, "", format!("{other:?}")),
    })?;
    let headers = reader.headers().map_err(|e| parse_err(1, "", e.to_string()))?.clone();
    let position = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| parse_err(1, name, "column missing from header"))
    };
    let label_pos = position(&schema.label)?;
    let client_pos: Vec<usize> = schema.client.iter().map(|c| position(c)).collect::<Result<_>>()?;
    let host_pos: Vec<usize> = schema.host.iter().map(|c| position(c)).collect::<Result<_>>()?;
    for name in &schema.ignore {
        position(name)?;
    }
    if !schema.ignore_unlisted {
        let listed: Vec<&str> = std::iter::once(schema.label.as_str())
            .chain(schema.client.iter().map(String::as_str))
            .chain(schema.host.iter().map(String::as_str))
            .chain(schema.ignore.iter().map(String::as_str))
            .collect();
        if let Some(extra) = headers.iter().find(|h| !listed.contains(&h.trim())) {
            return Err(parse_err(1, extra, "column has no role in the schema"));
        }
    }

    let mut client_raw = Vec::new();
    let mut host_raw = Vec::new();
    let mut raw_labels = Vec::new();
    let mut rejected = 0usize;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, "", e.to_string()))?;
        let cells = |pos: &[usize], names: &[String]| -> Result<Option<Vec<f64>>> {
            let mut out = Vec::with_capacity(pos.len());
            for (&p, name) in pos.iter().zip(names) {
                let cell = record.get(p).unwrap_or("").trim();
                if cell.is_empty() {
                    return Ok(None);
                }
                let v: f64 = cell.parse().map_err(|_| parse_err(line, name, format!("non-numeric cell {cell:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, name, format!("non-finite cell {cell:?}")));
                }
                out.push(v);
            }
            Ok(Some(out))
        };
        let label = record.get(label_pos).unwrap_or("").trim().to_string();
        match (cells(&client_pos, &schema.client)?, cells(&host_pos, &schema.host)?) {
            (Some(c), Some(h)) if !label.is_empty() => {
                client_raw.push(c);
                host_raw.push(h);
                raw_labels.push((line, label));
            }
            _ => rejected += 1,
        }
    }
    if rejected > 0 {
        log::warn!("{}: dropped {rejected} rows with empty cells", path.display());
    }

    let label_values = match &schema.label_values {
        Some(v) => v.clone(),
        None => {
            let mut v: Vec<String> = raw_labels.iter().map(|(_, l)| l.clone()).collect();
            v.sort();
            v.dedup();
            v
        }
    };
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|(line, l)| {
            label_values
                .iter()
                .position(|v| v == l)
                .ok_or_else(|| parse_err(*line, &schema.label, format!("unknown label value {l:?}")))
        })
        .collect::<Result<_>>()?;

    let n = labels.len();
    let n_val = (n as f64 * schema.validation_fraction).round() as usize;
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(Error::Contract(format!("{}: no training rows", path.display())));
    }
    let stats_for = |raw: &[Vec<f64>], names: &[String]| -> Vec<ColumnStats> {
        names.iter().enumerate().map(|(c, name)| column_stats(name, raw[..n_train].iter().map(move |r| r[c]))).collect()
    };
    let client_stats = stats_for(&client_raw, &schema.client);
    let host_stats = stats_for(&host_raw, &schema.host);

    let class_count = label_values.len();
    let part = |range: std::ops::Range<usize>, tag| -> Result<VerticalDataset> {
        VerticalDataset::new(
            normalize(&client_raw, &client_stats, range.clone()),
            normalize(&host_raw, &host_stats, range.clone()),
            labels[range].to_vec(),
            class_count,
            tag,
        )
    };
    let train = part(0..n_train, SplitTag::Train)?;
    let validation = part(n_train..n, SplitTag::Validation)?;
    log::info!("{}: {n} rows ({n_train} train), class histogram {:?}", path.display(), train.class_histogram());
    Ok(LoadedCsv { splits: DataSplits { train, validation }, client_stats, host_stats, label_values })
}
