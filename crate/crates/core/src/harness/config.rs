//! Versioned TOML experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, ExtensionConfig};
use crate::data::BlobSpec;
use crate::defense::{DishonestMode, DEFAULT_ATTRIBUTE_MAX};
use crate::error::{Error, Result};
use crate::nd::{OptimizerConfig, OptimizerKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub attack: AttackSettings,
    /// Rows of validation embeddings to dump per seed; 0 disables.
    #[serde(default)]
    pub dump_embeddings: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        class_count: usize,
        client_dims: usize,
        host_dims: usize,
        n_per_class: usize,
        cluster_spread: f64,
        #[serde(default = "default_validation_fraction")]
        validation_fraction: f64,
    },
    Csv {
        path: PathBuf,
        /// TOML schema file; relative paths resolve against the working directory.
        schema: PathBuf,
    },
}

fn default_validation_fraction() -> f64 {
    0.2
}

impl DatasetConfig {
    pub fn blob_spec(&self) -> Option<BlobSpec> {
        match *self {
            DatasetConfig::Synthetic { class_count, client_dims, host_dims, n_per_class, cluster_spread, .. } => {
                Some(BlobSpec { class_count, client_dims, host_dims, n_per_class, cluster_spread })
            }
            DatasetConfig::Csv { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub bottom_hidden: Vec<usize>,
    pub cut_width: usize,
    pub top_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { bottom_hidden: vec![32], cut_width: 10, top_hidden: vec![32] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { epochs: 200, batch_size: 64, optimizer: OptimizerKind::Adam, learning_rate: 3e-3 }
    }
}

impl TrainSettings {
    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig { kind: self.optimizer, learning_rate: self.learning_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseConfig {
    #[default]
    None,
    Discorloss {
        lambda: f64,
    },
    Labobf {
        #[serde(default = "default_bins")]
        bins_per_class: usize,
        /// Defaults to `[0, C - 1]`.
        #[serde(default)]
        soft_range: Option<(f64, f64)>,
        #[serde(default = "default_attribute_max")]
        attribute_max: u32,
        /// Defaults to quantile cuts (201 for two bins).
        #[serde(default)]
        thresholds: Option<Vec<u32>>,
        /// Client reports corrupted attribute values.
        #[serde(default)]
        dishonest: Option<DishonestMode>,
    },
}

fn default_bins() -> usize {
    2
}

fn default_attribute_max() -> u32 {
    DEFAULT_ATTRIBUTE_MAX
}

/// Attacker training knobs shared by both attack kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowSettings {
    pub head_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub fine_tune_bottom: bool,
    pub pseudo_label: bool,
}

impl Default for ShadowSettings {
    fn default() -> Self {
        ShadowSettings {
            head_hidden: vec![16],
            epochs: 40,
            batch_size: 16,
            learning_rate: 3e-3,
            fine_tune_bottom: false,
            pseudo_label: false,
        }
    }
}

impl ShadowSettings {
    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            head_hidden: self.head_hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: OptimizerConfig::adam(self.learning_rate),
            fine_tune_bottom: self.fine_tune_bottom,
            pseudo_label: self.pseudo_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSettings {
    #[default]
    None,
    ModelCompletion {
        aux_size: usize,
        /// Also compute the upper and lower reference bounds.
        #[serde(default)]
        references: bool,
        #[serde(default)]
        shadow: ShadowSettings,
    },
    Extension {
        aux_size: usize,
        #[serde(default = "default_perturbation_width")]
        perturbation_width: usize,
        #[serde(default = "default_inner_epochs")]
        inner_epochs: usize,
        #[serde(default = "default_inner_lr")]
        inner_lr: f64,
        #[serde(default)]
        shadow: ShadowSettings,
    },
}

fn default_perturbation_width() -> usize {
    ExtensionConfig::default().perturbation_width
}

fn default_inner_epochs() -> usize {
    ExtensionConfig::default().inner_epochs
}

fn default_inner_lr() -> f64 {
    ExtensionConfig::default().inner_lr
}

impl AttackSettings {
    pub fn aux_size(&self) -> Option<usize> {
        match self {
            AttackSettings::None => None,
            AttackSettings::ModelCompletion { aux_size, .. } | AttackSettings::Extension { aux_size, .. } => {
                Some(*aux_size)
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if let Some(spec) = self.dataset.blob_spec() {
            spec.validate()?;
        }
        if let DatasetConfig::Synthetic { validation_fraction, .. } = self.dataset {
            if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
                return bad(format!("validation_fraction must be in (0, 1), got {validation_fraction}"));
            }
        }
        if self.model.cut_width == 0 {
            return bad("cut_width must be >= 1".into());
        }
        if self.train.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.train.batch_size));
        }
        if !(self.train.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.train.learning_rate));
        }
        match &self.defense {
            DefenseConfig::None => {}
            DefenseConfig::Discorloss { lambda } => {
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    return bad(format!("lambda must be >= 0, got {lambda}"));
                }
            }
            DefenseConfig::Labobf { bins_per_class, attribute_max, thresholds, soft_range, .. } => {
                if *bins_per_class < 1 || *attribute_max < 1 {
                    return bad("labobf needs bins_per_class >= 1 and attribute_max >= 1".into());
                }
                if let Some(t) = thresholds {
                    if t.len() + 1 != *bins_per_class {
                        return bad(format!("{} thresholds do not make {bins_per_class} bins", t.len()));
                    }
                }
                if let Some((lo, hi)) = soft_range {
                    if !(lo < hi) {
                        return bad(format!("soft_range must satisfy lo < hi, got ({lo}, {hi})"));
                    }
                }
            }
        }
        match &self.attack {
            AttackSettings::None => {}
            AttackSettings::ModelCompletion { aux_size, .. } => {
                if *aux_size == 0 {
                    return bad("aux_size must be >= 1".into());
                }
            }
            AttackSettings::Extension { aux_size, perturbation_width, .. } => {
                if !matches!(self.defense, DefenseConfig::Discorloss { lambda } if lambda > 0.0) {
                    return bad("the extension attack needs a discorloss defense with lambda > 0".into());
                }
                if *aux_size < 2 || *perturbation_width == 0 {
                    return bad("extension needs aux_size >= 2 and perturbation_width >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (keys sorted).
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// SHA-256 over `serde_json` output with object keys sorted.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serializes");
    let text = serde_json::to_string(&canonical).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
