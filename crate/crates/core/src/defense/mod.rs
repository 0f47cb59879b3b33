//! Host-side defenses: the distance-correlation regularizer and label
//! obfuscation with secret soft labels.

mod binning;
mod softlabel;

pub use binning::{quantile_thresholds, BinningRule, DEFAULT_ATTRIBUTE_MAX};
pub use softlabel::{
    decode_prediction, generate_soft_label_map, validate_soft_label_map, Severity, SoftLabelMap, Violation,
    ViolationKind,
};

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DataSplits, RandomAttributes, VerticalDataset};
use crate::error::{Error, Result};
use crate::nd::{Tape, ValueId};
use crate::rng::Rng;
use crate::split::{self, Decoding, History, HostObjective, SplitModel, TrainConfig};
use crate::stats::{distance_correlation_on_tape, LabelEncoding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscorlossConfig {
    pub lambda: f64,
}

impl DiscorlossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `CE(logits, y) + lambda * dCor(upload, onehot(y))` on the host tape.
///
/// `upload` is whatever the client sent, extension columns included. With
/// `lambda == 0` the cross-entropy node itself is returned.
pub fn discorloss_total(
    tape: &mut Tape,
    logits: ValueId,
    upload: ValueId,
    labels: &[usize],
    class_count: usize,
    lambda: f64,
) -> Result<ValueId> {
    if labels.len() < 2 {
        return Err(Error::contract(format!("discorloss needs a batch of at least 2, got {}", labels.len())));
    }
    let ce = tape.softmax_cross_entropy(logits, labels)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let y = tape.leaf(LabelEncoding::one_hot(class_count).encode(labels)?);
    let dcor = distance_correlation_on_tape(tape, upload, y)?;
    let reg = tape.scale(dcor, lambda);
    tape.add(ce, reg)
}

/// Everything the host keeps to itself under label obfuscation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabObfSecret {
    pub map: SoftLabelMap,
    pub rule: BinningRule,
}

impl LabObfSecret {
    pub fn new(map: SoftLabelMap, rule: BinningRule) -> Result<LabObfSecret> {
        rule.validate()?;
        if map.bins_per_class != rule.bin_count() {
            return Err(Error::contract(format!(
                "map has {} bins per class but the rule has {}",
                map.bins_per_class,
                rule.bin_count()
            )));
        }
        Ok(LabObfSecret { map, rule })
    }

    /// Per-row soft targets using the client's *reported* attribute column.
    pub fn targets(&self, ds: &VerticalDataset, reported_client: &[u32]) -> Result<Vec<f64>> {
        let attrs = require_attributes(ds)?;
        if reported_client.len() != ds.len() {
            return Err(Error::dim("reported client attributes", ds.len(), reported_client.len()));
        }
        (0..ds.len())
            .map(|i| self.rule.soft_target(&self.map, ds.labels[i], reported_client[i], attrs.host[i]))
            .collect()
    }

    /// Writes the map and thresholds as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LabObfSecret> {
        let text = std::fs::read_to_string(path)?;
        let s: LabObfSecret = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        LabObfSecret::new(s.map, s.rule)
    }
}

fn require_attributes(ds: &VerticalDataset) -> Result<&RandomAttributes> {
    ds.attributes.as_ref().ok_or_else(|| Error::contract("label obfuscation needs both random attribute columns"))
}

/// Regresses the scalar top output onto soft targets. The client's gradient
/// is derived from those targets only. `reported_client` is what the client
/// claims its attribute column is; `None` means it reports honestly.
pub fn train_labobf(
    model: &mut SplitModel,
    splits: &DataSplits,
    secret: &LabObfSecret,
    cfg: &TrainConfig,
    reported_client: Option<&[u32]>,
) -> Result<History> {
    if model.output_width() != 1 {
        return Err(Error::contract(format!(
            "label obfuscation needs a scalar top output, got width {}",
            model.output_width()
        )));
    }
    let attrs = require_attributes(&splits.train)?;
    require_attributes(&splits.validation)?;
    let reported = reported_client.unwrap_or(&attrs.client);
    let targets = secret.targets(&splits.train, reported)?;
    split::train(
        model,
        &splits.train,
        Some(&splits.validation),
        &HostObjective::SoftMse { targets },
        &Decoding::SoftLabel(secret.map.clone()),
        cfg,
        None,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DishonestMode {
    /// Report a random permutation of the true column.
    Shuffle,
    /// Report zeros.
    Constant,
}

/// The attribute column a dishonest client reports instead of its real one.
pub fn dishonest_report_mode(ds: &VerticalDataset, mode: DishonestMode, rng: &mut Rng) -> Result<Vec<u32>> {
    let attrs = require_attributes(ds)?;
    Ok(match mode {
        DishonestMode::Shuffle => {
            let mut perm: Vec<usize> = (0..ds.len()).collect();
            perm.shuffle(rng);
            permute_report(&attrs.client, &perm)?
        }
        DishonestMode::Constant => vec![0; ds.len()],
    })
}

/// `out[i] = column[perm[i]]`.
pub fn permute_report(column: &[u32], perm: &[usize]) -> Result<Vec<u32>> {
    if perm.len() != column.len() {
        return Err(Error::dim("report permutation", column.len(), perm.len()));
    }
    perm.iter()
        .map(|&p| column.get(p).copied().ok_or_else(|| Error::contract(format!("permutation index {p} out of range"))))
        .collect()
}
