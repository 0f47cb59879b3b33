//! Attacks run from the client's side. Inputs are limited to what the client
//! legitimately holds: its features, its bottom network, the auxiliary
//! labels and the cut-layer gradients it receives.

mod completion;
mod extension;

pub use completion::{
    compute_r_lower, model_completion_attack, AttackConfig, AttackReport, EvalSet, Scenario, ShadowModel,
};
pub use extension::{
    extension_objective, pearson_diagnostic, run_extension_attack_training, train_perturbation_generator,
    DimensionCorrelation, ExtensionConfig, ExtensionHook, ExtensionRun, PerturbationGenerator,
};

use crate::data::{AuxiliarySet, DataSplits};
use crate::error::Result;
use crate::split::{train_plain, History, SplitArchitecture, SplitModel, TrainConfig};

/// Upper reference: train an undefended split model, then attack its client bottom.
pub fn compute_r_upper(
    splits: &DataSplits,
    arch: &SplitArchitecture,
    train_cfg: &TrainConfig,
    aux: &AuxiliarySet,
    attack_cfg: &AttackConfig,
) -> Result<(AttackReport, SplitModel, History)> {
    let mut model = SplitModel::init(arch, train_cfg.seed)?;
    let history = train_plain(&mut model, &splits.train, Some(&splits.validation), train_cfg)?;
    let eval_x = splits.validation.client_input();
    let eval = EvalSet { client_input: &eval_x, labels: &splits.validation.labels };
    let unlabeled = splits.train.client_input();
    let (_, report) = model_completion_attack(
        &model.client.bottom,
        aux,
        eval,
        Some(&unlabeled),
        attack_cfg,
        Scenario::RUpper,
        train_cfg.seed,
    )?;
    Ok((report, model, history))
}
