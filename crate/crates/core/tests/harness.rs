use std::collections::BTreeMap;

use cutlayer_core::defense::DishonestMode;
use cutlayer_core::harness::{
    apply_axis, emit_report, run_experiment, sweep, AttackSettings, DatasetConfig, DefenseConfig, ExperimentConfig,
    ModelConfig, ShadowSettings, SweepAxis, TrainSettings, ATTACK_ACC, BASELINE_MAIN_ACC, MAIN_TASK_ACC, R_LOWER,
    R_UPPER, SCHEMA_VERSION,
};
use cutlayer_core::{Error, OptimizerKind};

fn tiny(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        seeds: vec![1, 2],
        output_dir: dir.to_path_buf(),
        dataset: DatasetConfig::Synthetic {
            class_count: 2,
            client_dims: 3,
            host_dims: 3,
            n_per_class: 60,
            cluster_spread: 0.3,
            validation_fraction: 0.25,
        },
        model: ModelConfig { bottom_hidden: vec![8], cut_width: 4, top_hidden: vec![8] },
        train: TrainSettings { epochs: 3, batch_size: 16, optimizer: OptimizerKind::Adam, learning_rate: 1e-2 },
        defense: DefenseConfig::None,
        attack: AttackSettings::None,
        dump_embeddings: 0,
    }
}

fn quick_shadow() -> ShadowSettings {
    ShadowSettings { epochs: 3, ..ShadowSettings::default() }
}

#[test]
fn labobf_with_references_reports_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.defense = DefenseConfig::Labobf {
        bins_per_class: 2,
        soft_range: None,
        attribute_max: 200,
        thresholds: None,
        dishonest: None,
    };
    cfg.attack = AttackSettings::ModelCompletion { aux_size: 10, references: true, shadow: quick_shadow() };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.failed_seeds, 0);
    for s in &report.seeds {
        for m in [MAIN_TASK_ACC, ATTACK_ACC, R_UPPER, R_LOWER, BASELINE_MAIN_ACC] {
            let v = s.metric(m).unwrap_or_else(|| panic!("missing {m}"));
            assert!((0.0..=1.0).contains(&v), "{m} = {v}");
        }
        assert_eq!(s.per_class_attack.as_ref().unwrap().len(), 2);
        assert!(s.artifacts.iter().any(|p| p.starts_with(dir.path().join("host_private"))));
    }
    assert_eq!(report.aggregates[MAIN_TASK_ACC].n, 2);
    assert!(dir.path().join("host_private/softmap_seed1.json").exists());
}

#[test]
fn reports_are_identical_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.defense = DefenseConfig::Discorloss { lambda: 0.08 };
    cfg.attack = AttackSettings::ModelCompletion { aux_size: 10, references: false, shadow: quick_shadow() };
    let a = run_experiment(&cfg).unwrap().without_timing();
    let b = run_experiment(&cfg).unwrap().without_timing();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn extension_run_reports_labeled_pearson_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.seeds = vec![3];
    cfg.defense = DefenseConfig::Discorloss { lambda: 0.1 };
    cfg.attack = AttackSettings::Extension {
        aux_size: 10,
        perturbation_width: 4,
        inner_epochs: 2,
        inner_lr: 1.0,
        shadow: quick_shadow(),
    };
    let report = run_experiment(&cfg).unwrap();
    let pearson = report.seeds[0].pearson.as_ref().unwrap();
    let names: Vec<&str> = pearson.iter().map(|d| d.dimension.as_str()).collect();
    assert_eq!(names, ["E01", "E02", "E03", "E04", "P01", "P02", "P03", "P04"]);
    assert!(report.seeds[0].metric(ATTACK_ACC).is_some());
}

#[test]
fn csv_report_has_one_row_per_seed_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.seeds = vec![4, 5, 6];
    cfg.attack = AttackSettings::ModelCompletion { aux_size: 8, references: true, shadow: quick_shadow() };
    let report = run_experiment(&cfg).unwrap();
    let (json, csv) = emit_report(&report, dir.path()).unwrap();
    let metrics = report.seeds[0].metrics.len();
    assert_eq!(metrics, 5);
    let rows = std::fs::read_to_string(csv).unwrap().lines().count() - 1;
    assert_eq!(rows, 3 * metrics);
    let back: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(back["config_hash"].as_str().unwrap(), cfg.hash());
}

#[test]
fn aggregate_uses_sample_std() {
    let a = cutlayer_core::harness::Aggregate::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(a.mean, 2.5);
    assert!((a.std.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(cutlayer_core::harness::Aggregate::of(&[7.0]).unwrap().std, None);
    assert!(cutlayer_core::harness::Aggregate::of(&[]).is_none());
}

#[test]
fn all_seeds_failing_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    // More auxiliary rows than the train split holds.
    cfg.attack = AttackSettings::ModelCompletion { aux_size: 10_000, references: false, shadow: quick_shadow() };
    assert!(matches!(run_experiment(&cfg), Err(Error::AllSeedsFailed { count: 2, .. })));
}

#[test]
fn dishonest_client_is_configurable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.seeds = vec![9];
    cfg.defense = DefenseConfig::Labobf {
        bins_per_class: 2,
        soft_range: Some((0.0, 1.0)),
        attribute_max: 200,
        thresholds: Some(vec![201]),
        dishonest: Some(DishonestMode::Constant),
    };
    let report = run_experiment(&cfg).unwrap();
    assert!(report.seeds[0].metric(MAIN_TASK_ACC).is_some());
}

#[test]
fn sweep_axes_must_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    assert!(matches!(sweep(&cfg, SweepAxis::Lambda, &[0.1]), Err(Error::Config(_))));
    assert!(matches!(sweep(&cfg, SweepAxis::AuxSize, &[10.0]), Err(Error::Config(_))));
    let mut with_attack = cfg.clone();
    with_attack.attack = AttackSettings::ModelCompletion { aux_size: 4, references: false, shadow: quick_shadow() };
    assert!(matches!(sweep(&with_attack, SweepAxis::AuxSize, &[]), Err(Error::Config(_))));
    assert!(matches!(apply_axis(&with_attack, SweepAxis::AuxSize, 2.5), Err(Error::Config(_))));
    assert!("depth".parse::<SweepAxis>().is_err());
}

#[test]
fn aux_size_sweep_runs_each_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.seeds = vec![1];
    cfg.attack = AttackSettings::ModelCompletion { aux_size: 4, references: false, shadow: quick_shadow() };
    let out = sweep(&cfg, SweepAxis::AuxSize, &[4.0, 20.0]).unwrap();
    let sizes: BTreeMap<u64, usize> =
        out.points.iter().map(|p| (p.value as u64, p.report.config.attack.aux_size().unwrap())).collect();
    assert_eq!(sizes, BTreeMap::from([(4, 4), (20, 20)]));
}
