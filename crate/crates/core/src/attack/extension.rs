//! Embedding extension: the client appends `g(V)` to its upload so that a
//! distance-correlation penalty on the upload is absorbed by the extra
//! columns while `V` itself stays informative.

use serde::{Deserialize, Serialize};

use crate::data::{AuxiliarySet, DataSplits};
use crate::error::{Error, Result};
use crate::nd::{Mlp, MlpSpec, Optimizer, OptimizerConfig, Tape, Tensor2};
use crate::rng::{stream, Stream};
use crate::split::{
    self, ClientModel, CutTrace, Decoding, EpochHook, History, HostObjective, SplitArchitecture, SplitModel,
    TrainConfig,
};
use crate::stats::{distance_correlation_on_tape, pearson_per_dimension, LabelEncoding};

/// A single linear layer `d -> p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationGenerator {
    pub net: Mlp,
}

impl PerturbationGenerator {
    pub fn init(cut_width: usize, perturbation_width: usize, seed: u64) -> Result<Self> {
        if perturbation_width == 0 {
            return Err(Error::contract("perturbation width must be >= 1"));
        }
        let spec = MlpSpec::relu(&[cut_width, perturbation_width])?;
        Ok(PerturbationGenerator { net: Mlp::init(&spec, &mut stream(seed, Stream::Generator))? })
    }

    pub fn width(&self) -> usize {
        self.net.output_width()
    }

    /// `[v | g(v)]`
    pub fn extend(&self, v: &Tensor2) -> Result<Tensor2> {
        Tensor2::hcat(&[v, &self.net.predict(v)?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtensionConfig {
    pub perturbation_width: usize,
    pub inner_epochs: usize,
    pub inner_lr: f64,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        ExtensionConfig { perturbation_width: 4, inner_epochs: 20, inner_lr: 1.0 }
    }
}

/// `dCor([v | g(v)], onehot(y))` for a fixed embedding `v`.
pub fn extension_objective(g: &Mlp, v: &Tensor2, y_onehot: &Tensor2) -> Result<f64> {
    let ext = Tensor2::hcat(&[v, &g.predict(v)?])?;
    crate::stats::distance_correlation(&ext, y_onehot)
}

/// Full-batch gradient descent on the extension objective over the
/// auxiliary set. Only the generator moves. Returns the objective before
/// each step and after the last one.
pub fn train_perturbation_generator(
    g: &mut PerturbationGenerator,
    bottom: &Mlp,
    aux: &AuxiliarySet,
    epochs: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if aux.len() < 2 {
        return Err(Error::contract(format!("generator training needs at least 2 rows, got {}", aux.len())));
    }
    let v = bottom.predict(&aux.client_input)?;
    let y = LabelEncoding::one_hot(aux.class_count).encode(&aux.labels)?;
    let mut opt = Optimizer::new(OptimizerConfig::sgd(lr))?;
    let mut trajectory = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let gb = g.net.bind(&mut tape);
        let vi = tape.leaf(v.clone());
        let yi = tape.leaf(y.clone());
        let p = g.net.forward(&gb, &mut tape, vi)?;
        let ext = tape.concat_cols(&[vi, p])?;
        let obj = distance_correlation_on_tape(&mut tape, ext, yi)?;
        trajectory.push(tape.value(obj).item()?);
        let grads = tape.backward(obj)?;
        let gg = g.net.grads(&gb, &grads);
        opt.step(&mut g.net.params, &gg)?;
    }
    trajectory.push(extension_objective(&g.net, &v, &y)?);
    Ok(trajectory)
}

/// Retrains the client's generator on the auxiliary set before every epoch.
pub struct ExtensionHook<'a> {
    pub aux: &'a AuxiliarySet,
    pub cfg: ExtensionConfig,
    /// Objective after each refresh.
    pub objectives: Vec<f64>,
}

impl EpochHook for ExtensionHook<'_> {
    fn before_epoch(&mut self, _epoch: usize, client: &mut ClientModel) -> Result<()> {
        let net = client
            .extension
            .take()
            .ok_or_else(|| Error::Protocol("extension hook on a client without a generator".into()))?;
        let mut g = PerturbationGenerator { net };
        let result =
            train_perturbation_generator(&mut g, &client.bottom, self.aux, self.cfg.inner_epochs, self.cfg.inner_lr);
        client.extension = Some(g.net);
        let traj = result?;
        self.objectives.push(*traj.last().unwrap_or(&f64::NAN));
        Ok(())
    }
}

/// Result of training under the extension attack.
#[derive(Debug, Clone)]
pub struct ExtensionRun {
    pub model: SplitModel,
    pub history: History,
    pub generator: PerturbationGenerator,
    /// Extension objective after each per-epoch refresh.
    pub generator_objectives: Vec<f64>,
    pub trace: CutTrace,
}

/// Trains a Discorloss-defended split model while the client runs the
/// extension attack. The host sizes its top network for the declared upload
/// width `cut + p`.
pub fn run_extension_attack_training(
    splits: &DataSplits,
    arch: &SplitArchitecture,
    lambda: f64,
    ext: &ExtensionConfig,
    aux: &AuxiliarySet,
    cfg: &TrainConfig,
    trace_limit: usize,
) -> Result<ExtensionRun> {
    if !(lambda > 0.0) {
        return Err(Error::Config("the extension attack targets a Discorloss host (lambda > 0)".into()));
    }
    let arch = SplitArchitecture { extension_width: ext.perturbation_width, ..arch.clone() };
    let mut model = SplitModel::init(&arch, cfg.seed)?;
    let objective = HostObjective::Discorloss { lambda };
    let mut hook = ExtensionHook { aux, cfg: *ext, objectives: Vec::new() };
    let history = split::train(
        &mut model,
        &splits.train,
        Some(&splits.validation),
        &objective,
        &Decoding::Argmax,
        cfg,
        Some(&mut hook),
    )?;
    let trace = split::record_cut_trace(&model, &splits.validation, &objective, trace_limit)?;
    let generator = PerturbationGenerator {
        net: model.client.extension.clone().ok_or_else(|| Error::Protocol("generator lost".into()))?,
    };
    Ok(ExtensionRun { model, history, generator, generator_objectives: hook.objectives, trace })
}

/// One labeled Pearson correlation per uploaded dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionCorrelation {
    pub dimension: String,
    pub pearson: f64,
}

/// Pearson correlation of every uploaded client dimension with the labels.
/// The first `cut_width` columns are labeled `E01..`, the rest `P01..`.
pub fn pearson_diagnostic(trace: &CutTrace, labels: &[usize], cut_width: usize) -> Result<Vec<DimensionCorrelation>> {
    if trace.is_empty() {
        return Err(Error::contract("empty cut trace"));
    }
    let y: Vec<f64> = trace
        .row_ids
        .iter()
        .map(|&r| labels.get(r).map(|&l| l as f64).ok_or_else(|| Error::contract(format!("no label for row {r}"))))
        .collect::<Result<_>>()?;
    let report = pearson_per_dimension(&trace.client, &y)?;
    Ok(report
        .correlations
        .into_iter()
        .enumerate()
        .map(|(i, pearson)| DimensionCorrelation {
            dimension: if i < cut_width { format!("E{:02}", i + 1) } else { format!("P{:02}", i + 1 - cut_width) },
            pearson,
        })
        .collect())
}
