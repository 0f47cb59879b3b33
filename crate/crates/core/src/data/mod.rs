//! Vertically partitioned datasets: ingestion, synthetic generation,
//! train/validation splitting, auxiliary-set sampling and the random
//! attribute columns used by label obfuscation.

mod csv;
mod synth;

pub use self::csv::{load_csv, ColumnStats, CsvSchema, LoadedCsv};
pub use synth::{synth_blobs, BlobSpec};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::Tensor2;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
}

/// One extra integer column per party, uniform on `0..=max`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomAttributes {
    pub client: Vec<u32>,
    pub host: Vec<u32>,
    pub max: u32,
}

/// Rows shared by both parties; columns split between them.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalDataset {
    pub client_features: Tensor2,
    pub host_features: Tensor2,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub attributes: Option<RandomAttributes>,
    pub split: SplitTag,
}

impl VerticalDataset {
    pub fn new(
        client_features: Tensor2,
        host_features: Tensor2,
        labels: Vec<usize>,
        class_count: usize,
        split: SplitTag,
    ) -> Result<Self> {
        let ds = VerticalDataset { client_features, host_features, labels, class_count, attributes: None, split };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.client_features.rows() != n {
            return Err(Error::dim("client features rows", n, self.client_features.rows()));
        }
        if self.host_features.rows() != n {
            return Err(Error::dim("host features rows", n, self.host_features.rows()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::contract(format!("label {bad} outside 0..{}", self.class_count)));
        }
        if let Some(a) = &self.attributes {
            if a.client.len() != n || a.host.len() != n {
                return Err(Error::dim("random attribute columns", n, a.client.len().min(a.host.len())));
            }
            if a.client.iter().chain(&a.host).any(|&v| v > a.max) {
                return Err(Error::contract(format!("random attribute above max {}", a.max)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn client_width(&self) -> usize {
        self.client_features.cols()
    }

    pub fn host_width(&self) -> usize {
        self.host_features.cols()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    fn with_attribute(features: &Tensor2, column: Option<(&[u32], u32)>) -> Tensor2 {
        match column {
            None => features.clone(),
            Some((values, max)) => {
                let extra: Vec<f64> = values.iter().map(|&v| f64::from(v) / f64::from(max)).collect();
                Tensor2::hcat(&[features, &Tensor2::column(&extra)]).expect("row counts validated")
            }
        }
    }

    /// What the client's bottom network sees: its features, plus its random
    /// attribute scaled to `[0, 1]` when attributes are attached.
    pub fn client_input(&self) -> Tensor2 {
        Self::with_attribute(&self.client_features, self.attributes.as_ref().map(|a| (a.client.as_slice(), a.max)))
    }

    pub fn host_input(&self) -> Tensor2 {
        Self::with_attribute(&self.host_features, self.attributes.as_ref().map(|a| (a.host.as_slice(), a.max)))
    }

    pub fn select(&self, idx: &[usize]) -> VerticalDataset {
        VerticalDataset {
            client_features: self.client_features.select_rows(idx),
            host_features: self.host_features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            attributes: self.attributes.as_ref().map(|a| RandomAttributes {
                client: idx.iter().map(|&i| a.client[i]).collect(),
                host: idx.iter().map(|&i| a.host[i]).collect(),
                max: a.max,
            }),
            split: self.split,
        }
    }

    /// Drops the random attribute columns.
    pub fn without_attributes(&self) -> VerticalDataset {
        VerticalDataset { attributes: None, ..self.clone() }
    }
}

/// Train and validation parts of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: VerticalDataset,
    pub validation: VerticalDataset,
}

impl DataSplits {
    pub fn class_count(&self) -> usize {
        self.train.class_count
    }

    pub fn without_attributes(&self) -> DataSplits {
        DataSplits { train: self.train.without_attributes(), validation: self.validation.without_attributes() }
    }
}

/// Stratified shuffle split: each class contributes `round(fraction * count)` rows to validation.
pub fn train_validation_split(ds: &VerticalDataset, validation_fraction: f64, rng: &mut Rng) -> Result<DataSplits> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::contract(format!("validation fraction must be in [0, 1), got {validation_fraction}")));
    }
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for class in 0..ds.class_count {
        let mut rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        rows.shuffle(rng);
        let k = (rows.len() as f64 * validation_fraction).round() as usize;
        val_idx.extend_from_slice(&rows[..k]);
        train_idx.extend_from_slice(&rows[k..]);
    }
    train_idx.shuffle(rng);
    val_idx.shuffle(rng);
    let mut train = ds.select(&train_idx);
    train.split = SplitTag::Train;
    let mut validation = ds.select(&val_idx);
    validation.split = SplitTag::Validation;
    Ok(DataSplits { train, validation })
}

/// Labeled rows known to the attacker: client-visible columns only.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliarySet {
    /// Row indices into the train split.
    pub indices: Vec<usize>,
    /// Client bottom-model input for those rows.
    pub client_input: Tensor2,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl AuxiliarySet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-class quotas proportional to frequency; leftovers go to the largest
/// fractional parts (ties to the lower class).
pub fn stratified_quotas(histogram: &[usize], total: usize) -> Vec<usize> {
    let n: usize = histogram.iter().sum();
    if n == 0 {
        return vec![0; histogram.len()];
    }
    let exact: Vec<f64> = histogram.iter().map(|&c| total as f64 * c as f64 / n as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = total - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..histogram.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if quotas[c] < histogram[c] {
            quotas[c] += 1;
            remaining -= 1;
        }
    }
    quotas
}

/// Draws a class-stratified auxiliary set from the train split.
pub fn sample_auxiliary(train: &VerticalDataset, total_size: usize, rng: &mut Rng) -> Result<AuxiliarySet> {
    if total_size > train.len() {
        return Err(Error::contract(format!("auxiliary size {total_size} exceeds {} train rows", train.len())));
    }
    if total_size < train.class_count {
        return Err(Error::contract(format!(
            "auxiliary size {total_size} is below the class count {}",
            train.class_count
        )));
    }
    let hist = train.class_histogram();
    let quotas = stratified_quotas(&hist, total_size);
    let mut indices = Vec::with_capacity(total_size);
    for (class, &quota) in quotas.iter().enumerate() {
        let mut rows: Vec<usize> = (0..train.len()).filter(|&i| train.labels[i] == class).collect();
        if rows.len() < quota {
            return Err(Error::Sampling(format!("class {class} has {} candidates for a quota of {quota}", rows.len())));
        }
        let (picked, _) = rows.partial_shuffle(rng, quota);
        indices.extend_from_slice(picked);
    }
    let client_input = train.client_input().select_rows(&indices);
    let labels = indices.iter().map(|&i| train.labels[i]).collect();
    Ok(AuxiliarySet { indices, client_input, labels, class_count: train.class_count })
}

/// Attaches one uniform `0..=attribute_max` column per party.
pub fn add_random_attributes(ds: &VerticalDataset, attribute_max: u32, rng: &mut Rng) -> Result<VerticalDataset> {
    if attribute_max < 1 {
        return Err(Error::contract("attribute_max must be >= 1"));
    }
    let n = ds.len();
    let client = (0..n).map(|_| rng.random_range(0..=attribute_max)).collect();
    let host = (0..n).map(|_| rng.random_range(0..=attribute_max)).collect();
    let mut out = ds.clone();
    out.attributes = Some(RandomAttributes { client, host, max: attribute_max });
    Ok(out)
}
