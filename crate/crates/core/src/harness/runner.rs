//! Per-seed experiment execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AttackSettings, DatasetConfig, DefenseConfig, ExperimentConfig, SCHEMA_VERSION};
use crate::attack::{
    compute_r_lower, model_completion_attack, pearson_diagnostic, run_extension_attack_training, DimensionCorrelation,
    EvalSet, ExtensionConfig, Scenario,
};
use crate::data::{
    add_random_attributes, load_csv, sample_auxiliary, synth_blobs, train_validation_split, AuxiliarySet, CsvSchema,
    DataSplits,
};
use crate::defense::{dishonest_report_mode, generate_soft_label_map, train_labobf, BinningRule, LabObfSecret};
use crate::error::{Error, Result};
use crate::rng::{stream, substream, Stream};
use crate::split::{
    self, record_cut_trace, write_embedding_dump, Decoding, HostObjective, SplitArchitecture, SplitModel, TrainConfig,
};

pub const MAIN_TASK_ACC: &str = "main_task_acc";
pub const ATTACK_ACC: &str = "attack_acc";
pub const R_UPPER: &str = "r_upper";
pub const R_LOWER: &str = "r_lower";
pub const BASELINE_MAIN_ACC: &str = "baseline_main_acc";
pub const GENERATOR_OBJECTIVE: &str = "generator_objective";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Set when this seed failed; `metrics` is then empty.
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub per_class_attack: Option<Vec<Option<f64>>>,
    pub pearson: Option<Vec<DimensionCorrelation>>,
    pub artifacts: Vec<PathBuf>,
    pub wall_clock_s: f64,
}

impl SeedResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; absent below two values.
    pub std: Option<f64>,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Aggregate> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n >= 2).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Some(Aggregate { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedResult>,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub failed_seeds: usize,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregates.get(metric).map(|a| a.mean)
    }

    /// Same report with every timing field zeroed.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        r.wall_clock_s = 0.0;
        for s in &mut r.seeds {
            s.wall_clock_s = 0.0;
        }
        r
    }
}

/// Data shared by all seeds. CSV files are loaded once; blobs are drawn per seed.
enum Source {
    Synthetic { spec: crate::data::BlobSpec, validation_fraction: f64 },
    Csv(Box<DataSplits>),
}

impl Source {
    fn open(cfg: &DatasetConfig) -> Result<Source> {
        match cfg {
            DatasetConfig::Synthetic { validation_fraction, .. } => Ok(Source::Synthetic {
                spec: cfg.blob_spec().expect("synthetic config"),
                validation_fraction: *validation_fraction,
            }),
            DatasetConfig::Csv { path, schema } => {
                let schema = CsvSchema::from_toml(&std::fs::read_to_string(schema)?)?;
                Ok(Source::Csv(Box::new(load_csv(path, &schema)?.splits)))
            }
        }
    }

    fn splits(&self, seed: u64) -> Result<DataSplits> {
        match self {
            Source::Synthetic { spec, validation_fraction } => {
                let ds = synth_blobs(spec, &mut stream(seed, Stream::Data))?;
                train_validation_split(&ds, *validation_fraction, &mut stream(seed, Stream::Split))
            }
            Source::Csv(splits) => Ok((**splits).clone()),
        }
    }
}

fn architecture(cfg: &ExperimentConfig, splits: &DataSplits, outputs: usize) -> SplitArchitecture {
    SplitArchitecture {
        client_input: splits.train.client_input().cols(),
        host_input: splits.train.host_input().cols(),
        bottom_hidden: cfg.model.bottom_hidden.clone(),
        cut_width: cfg.model.cut_width,
        top_hidden: cfg.model.top_hidden.clone(),
        outputs,
        extension_width: 0,
    }
}

/// The same auxiliary rows, seen through a dataset without attribute columns.
fn reindex_aux(aux: &AuxiliarySet, splits: &DataSplits) -> AuxiliarySet {
    AuxiliarySet {
        indices: aux.indices.clone(),
        client_input: splits.train.client_input().select_rows(&aux.indices),
        labels: aux.labels.clone(),
        class_count: aux.class_count,
    }
}

fn softmap_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("host_private").join(format!("softmap_seed{seed}.json"))
}

fn embeddings_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("embeddings_seed{seed}.csv"))
}

struct SeedOutput {
    metrics: BTreeMap<String, f64>,
    per_class_attack: Option<Vec<Option<f64>>>,
    pearson: Option<Vec<DimensionCorrelation>>,
    artifacts: Vec<PathBuf>,
}

/// What the defended training produced, before any attack runs.
struct Trained {
    model: SplitModel,
    main_acc: f64,
    objective_on_validation: HostObjective,
    splits: DataSplits,
    aux: Option<AuxiliarySet>,
    pearson: Option<Vec<DimensionCorrelation>>,
    generator_objective: Option<f64>,
}

fn train_defended(cfg: &ExperimentConfig, source: &Source, seed: u64, artifacts: &mut Vec<PathBuf>) -> Result<Trained> {
    let mut splits = source.splits(seed)?;
    let class_count = splits.class_count();
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        optimizer: cfg.train.optimizer_config(),
        seed,
    };

    if let DefenseConfig::Labobf { attribute_max, .. } = cfg.defense {
        splits = DataSplits {
            train: add_random_attributes(&splits.train, attribute_max, &mut substream(seed, Stream::Attributes, 0))?,
            validation: add_random_attributes(
                &splits.validation,
                attribute_max,
                &mut substream(seed, Stream::Attributes, 1),
            )?,
        };
    }
    let aux = match cfg.attack.aux_size() {
        Some(n) => Some(sample_auxiliary(&splits.train, n, &mut stream(seed, Stream::Auxiliary))?),
        None => None,
    };

    if let AttackSettings::Extension { perturbation_width, inner_epochs, inner_lr, .. } = cfg.attack {
        let DefenseConfig::Discorloss { lambda } = cfg.defense else {
            return Err(Error::Config("the extension attack needs a discorloss defense".into()));
        };
        let ext = ExtensionConfig { perturbation_width, inner_epochs, inner_lr };
        let arch = architecture(cfg, &splits, class_count);
        let aux_ref = aux.as_ref().expect("extension has an aux size");
        let run =
            run_extension_attack_training(&splits, &arch, lambda, &ext, aux_ref, &train_cfg, splits.validation.len())?;
        let pearson = pearson_diagnostic(&run.trace, &splits.validation.labels, arch.cut_width)?;
        let main_acc = split::evaluate_accuracy(&run.model, &splits.validation, &Decoding::Argmax)?;
        return Ok(Trained {
            model: run.model,
            main_acc,
            objective_on_validation: HostObjective::Discorloss { lambda },
            splits,
            aux,
            pearson: Some(pearson),
            generator_objective: run.generator_objectives.last().copied(),
        });
    }

    let (model, main_acc, objective_on_validation) = match &cfg.defense {
        DefenseConfig::None | DefenseConfig::Discorloss { .. } => {
            let objective = match cfg.defense {
                DefenseConfig::Discorloss { lambda } => HostObjective::Discorloss { lambda },
                _ => HostObjective::CrossEntropy,
            };
            let mut model = SplitModel::init(&architecture(cfg, &splits, class_count), seed)?;
            split::train(
                &mut model,
                &splits.train,
                Some(&splits.validation),
                &objective,
                &Decoding::Argmax,
                &train_cfg,
                None,
            )?;
            let acc = split::evaluate_accuracy(&model, &splits.validation, &Decoding::Argmax)?;
            (model, acc, objective)
        }
        DefenseConfig::Labobf { bins_per_class, soft_range, attribute_max, thresholds, dishonest } => {
            let range = soft_range.unwrap_or((0.0, (class_count - 1) as f64));
            let map =
                generate_soft_label_map(class_count, *bins_per_class, range, &mut stream(seed, Stream::SoftLabels))?;
            let rule = match thresholds {
                Some(t) => BinningRule::new(*attribute_max, t.clone())?,
                None => BinningRule::quantile(*attribute_max, *bins_per_class)?,
            };
            let secret = LabObfSecret::new(map, rule)?;
            let path = softmap_path(&cfg.output_dir, seed);
            secret.save(&path)?;
            artifacts.push(path);
            let reported = match dishonest {
                Some(mode) => Some(dishonest_report_mode(&splits.train, *mode, &mut stream(seed, Stream::Dishonest))?),
                None => None,
            };
            let mut model = SplitModel::init(&architecture(cfg, &splits, 1), seed)?;
            train_labobf(&mut model, &splits, &secret, &train_cfg, reported.as_deref())?;
            let decoding = Decoding::SoftLabel(secret.map.clone());
            let acc = split::evaluate_accuracy(&model, &splits.validation, &decoding)?;
            let val_attrs = splits.validation.attributes.as_ref().expect("attributes were added");
            let targets = secret.targets(&splits.validation, &val_attrs.client)?;
            (model, acc, HostObjective::SoftMse { targets })
        }
    };
    Ok(Trained { model, main_acc, objective_on_validation, splits, aux, pearson: None, generator_objective: None })
}

fn run_seed(cfg: &ExperimentConfig, source: &Source, seed: u64, dump: Option<(usize, PathBuf)>) -> Result<SeedOutput> {
    let mut artifacts = Vec::new();
    let t = train_defended(cfg, source, seed, &mut artifacts)?;
    let mut metrics = BTreeMap::new();
    metrics.insert(MAIN_TASK_ACC.to_string(), t.main_acc);
    if let Some(g) = t.generator_objective {
        metrics.insert(GENERATOR_OBJECTIVE.to_string(), g);
    }

    if let Some((limit, path)) = dump {
        let trace = record_cut_trace(&t.model, &t.splits.validation, &t.objective_on_validation, limit)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_embedding_dump(&trace, &t.splits.validation.labels, cfg.train.epochs, &path)?;
        artifacts.push(path);
    }

    let mut per_class_attack = None;
    let (shadow, references) = match &cfg.attack {
        AttackSettings::None => (None, false),
        AttackSettings::ModelCompletion { shadow, references, .. } => (Some(shadow), *references),
        AttackSettings::Extension { shadow, .. } => (Some(shadow), false),
    };
    if let (Some(shadow), Some(aux)) = (shadow, t.aux.as_ref()) {
        let attack_cfg = shadow.attack_config();
        let undefended = matches!(cfg.defense, DefenseConfig::None);
        let scenario = if undefended { Scenario::RUpper } else { Scenario::Defended };
        let eval_x = t.splits.validation.client_input();
        let unlabeled = t.splits.train.client_input();
        let eval = EvalSet { client_input: &eval_x, labels: &t.splits.validation.labels };
        let (_, report) =
            model_completion_attack(&t.model.client.bottom, aux, eval, Some(&unlabeled), &attack_cfg, scenario, seed)?;
        metrics.insert(ATTACK_ACC.to_string(), report.attack_top1);
        per_class_attack = Some(report.per_class);

        if references {
            let plain = t.splits.without_attributes();
            let plain_aux = reindex_aux(aux, &plain);
            let arch = architecture(cfg, &plain, plain.class_count());
            if undefended {
                metrics.insert(R_UPPER.to_string(), report.attack_top1);
                metrics.insert(BASELINE_MAIN_ACC.to_string(), t.main_acc);
            } else {
                let train_cfg = TrainConfig {
                    epochs: cfg.train.epochs,
                    batch_size: cfg.train.batch_size,
                    optimizer: cfg.train.optimizer_config(),
                    seed,
                };
                let (upper, model, _) =
                    crate::attack::compute_r_upper(&plain, &arch, &train_cfg, &plain_aux, &attack_cfg)?;
                metrics.insert(R_UPPER.to_string(), upper.attack_top1);
                let baseline = split::evaluate_accuracy(&model, &plain.validation, &Decoding::Argmax)?;
                metrics.insert(BASELINE_MAIN_ACC.to_string(), baseline);
            }
            let plain_x = plain.validation.client_input();
            let plain_eval = EvalSet { client_input: &plain_x, labels: &plain.validation.labels };
            let lower = compute_r_lower(&arch.client_spec()?, &plain_aux, plain_eval, &attack_cfg, seed)?;
            metrics.insert(R_LOWER.to_string(), lower.attack_top1);
        }
    }
    Ok(SeedOutput { metrics, per_class_attack, pearson: t.pearson, artifacts })
}

fn aggregate(seeds: &[SeedResult]) -> BTreeMap<String, Aggregate> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in seeds.iter().filter(|s| s.is_ok()) {
        for (k, v) in &s.metrics {
            columns.entry(k.clone()).or_default().push(*v);
        }
    }
    columns.into_iter().filter_map(|(k, v)| Aggregate::of(&v).map(|a| (k, a))).collect()
}

/// Runs every seed of `cfg` (in parallel when cores allow) and aggregates.
/// A failing seed is recorded and the rest continue; if every seed fails the
/// whole run is an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let limit = cfg.dump_embeddings;
    run_with_dump(cfg, |seed| (limit > 0).then(|| (limit, embeddings_path(&cfg.output_dir, seed))))
}

fn run_with_dump<D>(cfg: &ExperimentConfig, dump: D) -> Result<RunReport>
where
    D: Fn(u64) -> Option<(usize, PathBuf)> + Sync,
{
    cfg.validate()?;
    let start = Instant::now();
    let source = Source::open(&cfg.dataset)?;
    let seeds: Vec<SeedResult> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let t0 = Instant::now();
            let outcome = run_seed(cfg, &source, seed, dump(seed));
            let wall_clock_s = t0.elapsed().as_secs_f64();
            match outcome {
                Ok(out) => SeedResult {
                    seed,
                    error: None,
                    metrics: out.metrics,
                    per_class_attack: out.per_class_attack,
                    pearson: out.pearson,
                    artifacts: out.artifacts,
                    wall_clock_s,
                },
                Err(e) => {
                    log::warn!("seed {seed} failed: {e}");
                    SeedResult {
                        seed,
                        error: Some(e.to_string()),
                        metrics: BTreeMap::new(),
                        per_class_attack: None,
                        pearson: None,
                        artifacts: Vec::new(),
                        wall_clock_s,
                    }
                }
            }
        })
        .collect();
    let failed_seeds = seeds.iter().filter(|s| !s.is_ok()).count();
    if failed_seeds == seeds.len() {
        return Err(Error::AllSeedsFailed { count: failed_seeds, first: seeds[0].error.clone().unwrap_or_default() });
    }
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        aggregates: aggregate(&seeds),
        seeds,
        failed_seeds,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Trains the configured experiment for one seed and writes up to `limit`
/// validation rows of cut-layer embeddings to `path`. Returns the number of
/// CSV rows written (one per row and party).
pub fn dump_embeddings(cfg: &ExperimentConfig, seed: u64, limit: usize, path: &Path) -> Result<usize> {
    if limit == 0 {
        return Err(Error::Config("embedding dump limit must be >= 1".into()));
    }
    let mut one = cfg.clone();
    one.seeds = vec![seed];
    if !matches!(cfg.attack, AttackSettings::Extension { .. }) {
        one.attack = AttackSettings::None;
    }
    run_with_dump(&one, |_| Some((limit, path.to_path_buf())))?;
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().count().saturating_sub(1))
}
