//! The two-party SplitNN protocol.
//!
//! The client runs its bottom network (and, when attacking, a perturbation
//! generator) and uploads one embedding per row. The host concatenates it
//! with its own bottom output as `[client | host]`, evaluates the top
//! network and its loss, and returns only `dL/d(upload)` to the client.

mod dump;

pub use dump::{write_embedding_dump, Party};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::VerticalDataset;
use crate::defense::{decode_prediction, discorloss_total, SoftLabelMap};
use crate::error::{Error, Result};
use crate::nd::{Gradients, Mlp, MlpParams, MlpSpec, Optimizer, OptimizerConfig, Tape, Tensor2, ValueId};
use crate::rng::{stream, substream, Rng, Stream};

/// Client side: bottom network plus an optional generator whose output is
/// appended to the uploaded embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientModel {
    pub bottom: Mlp,
    pub extension: Option<Mlp>,
}

impl ClientModel {
    pub fn upload_width(&self) -> usize {
        self.bottom.output_width() + self.extension.as_ref().map_or(0, Mlp::output_width)
    }

    /// The uploaded embedding `[V | g(V)]` without recording gradients.
    pub fn upload(&self, x_c: &Tensor2) -> Result<Tensor2> {
        let v = self.bottom.predict(x_c).map_err(|e| party_err("client", e))?;
        match &self.extension {
            None => Ok(v),
            Some(g) => Tensor2::hcat(&[&v, &g.predict(&v)?]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostModel {
    pub bottom: Mlp,
    pub top: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitModel {
    pub client: ClientModel,
    pub host: HostModel,
}

/// Network shapes for both parties. Bottoms are `[input, hidden.., cut]`,
/// the top is `[upload + cut, top_hidden.., outputs]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitArchitecture {
    pub client_input: usize,
    pub host_input: usize,
    pub bottom_hidden: Vec<usize>,
    pub cut_width: usize,
    pub top_hidden: Vec<usize>,
    pub outputs: usize,
    /// Width of the client's appended perturbation; 0 for none.
    pub extension_width: usize,
}

impl SplitArchitecture {
    /// Bottoms `[d, 32, 10]`, top `[20, 32, outputs]`.
    pub fn desk_default(client_input: usize, host_input: usize, outputs: usize) -> Self {
        SplitArchitecture {
            client_input,
            host_input,
            bottom_hidden: vec![32],
            cut_width: 10,
            top_hidden: vec![32],
            outputs,
            extension_width: 0,
        }
    }

    fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend_from_slice(hidden);
        w.push(output);
        w
    }

    pub fn client_spec(&self) -> Result<MlpSpec> {
        MlpSpec::relu(&Self::widths(self.client_input, &self.bottom_hidden, self.cut_width))
    }

    pub fn host_spec(&self) -> Result<MlpSpec> {
        MlpSpec::relu(&Self::widths(self.host_input, &self.bottom_hidden, self.cut_width))
    }

    pub fn top_spec(&self) -> Result<MlpSpec> {
        let input = 2 * self.cut_width + self.extension_width;
        MlpSpec::relu(&Self::widths(input, &self.top_hidden, self.outputs))
    }

    /// Single linear layer `cut -> extension_width`.
    pub fn extension_spec(&self) -> Result<Option<MlpSpec>> {
        if self.extension_width == 0 {
            return Ok(None);
        }
        MlpSpec::relu(&[self.cut_width, self.extension_width]).map(Some)
    }
}

impl SplitModel {
    /// Each network draws from its own seeded stream.
    pub fn init(arch: &SplitArchitecture, seed: u64) -> Result<SplitModel> {
        let extension = match arch.extension_spec()? {
            None => None,
            Some(spec) => Some(Mlp::init(&spec, &mut stream(seed, Stream::Generator))?),
        };
        Ok(SplitModel {
            client: ClientModel {
                bottom: Mlp::init(&arch.client_spec()?, &mut stream(seed, Stream::ClientInit))?,
                extension,
            },
            host: HostModel {
                bottom: Mlp::init(&arch.host_spec()?, &mut stream(seed, Stream::HostInit))?,
                top: Mlp::init(&arch.top_spec()?, &mut stream(seed, Stream::TopInit))?,
            },
        })
    }

    /// Checks that the top network accepts what the two parties upload.
    pub fn check_geometry(&self) -> Result<()> {
        let upload = self.client.upload_width() + self.host.bottom.output_width();
        if self.host.top.input_width() != upload {
            return Err(Error::Protocol(format!(
                "top expects {} inputs but client uploads {} and host bottom emits {}",
                self.host.top.input_width(),
                self.client.upload_width(),
                self.host.bottom.output_width()
            )));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.host.top.output_width()
    }
}

fn party_err(party: &str, e: Error) -> Error {
    match e {
        Error::Dimension { context, expected, actual } => {
            Error::Dimension { context: format!("{party} bottom: {context}"), expected, actual }
        }
        other => other,
    }
}

/// `f_t([f_bc(x_c) | g? | f_bh(x_h)])`, untaped.
pub fn joint_forward(model: &SplitModel, x_c: &Tensor2, x_h: &Tensor2) -> Result<Tensor2> {
    model.check_geometry()?;
    let up = model.client.upload(x_c)?;
    let vh = model.host.bottom.predict(x_h).map_err(|e| party_err("host", e))?;
    if up.rows() != vh.rows() {
        return Err(Error::dim("client/host batch rows", up.rows(), vh.rows()));
    }
    model.host.top.predict(&Tensor2::hcat(&[&up, &vh])?)
}

/// What the host minimizes. Targets are indexed by dataset row.
#[derive(Debug, Clone, PartialEq)]
pub enum HostObjective {
    CrossEntropy,
    /// Cross-entropy plus `lambda * dCor(upload, onehot(y))`.
    Discorloss {
        lambda: f64,
    },
    /// Mean squared error of a scalar output against per-row soft targets.
    SoftMse {
        targets: Vec<f64>,
    },
}

impl HostObjective {
    fn loss(
        &self,
        tape: &mut Tape,
        out: ValueId,
        upload: ValueId,
        rows: &[usize],
        labels: &[usize],
        class_count: usize,
    ) -> Result<ValueId> {
        match self {
            HostObjective::CrossEntropy => tape.softmax_cross_entropy(out, labels),
            HostObjective::Discorloss { lambda } => discorloss_total(tape, out, upload, labels, class_count, *lambda),
            HostObjective::SoftMse { targets } => {
                let t: Vec<f64> = rows.iter().map(|&r| targets[r]).collect();
                tape.mse(out, &Tensor2::column(&t))
            }
        }
    }
}

/// How the top output becomes a class.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoding {
    /// Largest logit, ties to the lower class.
    Argmax,
    /// Nearest soft label of a scalar output.
    SoftLabel(SoftLabelMap),
}

impl Decoding {
    pub fn decode(&self, outputs: &Tensor2) -> Vec<usize> {
        match self {
            Decoding::Argmax => outputs.argmax_rows(),
            Decoding::SoftLabel(map) => {
                (0..outputs.rows()).map(|r| decode_prediction(outputs.get(r, 0), map)).collect()
            }
        }
    }
}

pub fn predict(model: &SplitModel, x_c: &Tensor2, x_h: &Tensor2, decoding: &Decoding) -> Result<Vec<usize>> {
    Ok(decoding.decode(&joint_forward(model, x_c, x_h)?))
}

/// Parameter gradients of every network for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGradients {
    pub loss: f64,
    pub client_bottom: MlpParams,
    pub host_bottom: MlpParams,
    pub top: MlpParams,
    /// `dL/d(upload)` as returned to the client.
    pub cut_gradient: Tensor2,
}

/// What the host sends back: the loss it saw and the cut-layer gradient.
struct HostReply {
    loss: f64,
    cut_gradient: Tensor2,
    host_bottom: MlpParams,
    top: MlpParams,
}

/// Host half of a step. Sees only the uploaded matrix, never client inputs.
fn host_step(
    host: &HostModel,
    upload: &Tensor2,
    x_h: &Tensor2,
    rows: &[usize],
    labels: &[usize],
    class_count: usize,
    objective: &HostObjective,
) -> Result<HostReply> {
    let mut tape = Tape::new();
    let up = tape.leaf(upload.clone());
    let hb = host.bottom.bind(&mut tape);
    let top = host.top.bind(&mut tape);
    let xh = tape.leaf(x_h.clone());
    let vh = host.bottom.forward(&hb, &mut tape, xh).map_err(|e| party_err("host", e))?;
    let z = tape.concat_cols(&[up, vh])?;
    let out = host.top.forward(&top, &mut tape, z)?;
    let loss = objective.loss(&mut tape, out, up, rows, labels, class_count)?;
    let loss_value = tape.value(loss).item()?;
    if !loss_value.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    let grads = tape.backward(loss)?;
    Ok(HostReply {
        loss: loss_value,
        cut_gradient: grads.get_or_zeros(up, upload),
        host_bottom: host.bottom.grads(&hb, &grads),
        top: host.top.grads(&top, &grads),
    })
}

struct ClientPass {
    tape: Tape,
    bound: crate::nd::BoundMlp,
    upload: ValueId,
}

fn client_forward(client: &ClientModel, x_c: &Tensor2) -> Result<ClientPass> {
    let mut tape = Tape::new();
    let bound = client.bottom.bind(&mut tape);
    let x = tape.leaf(x_c.clone());
    let v = client.bottom.forward(&bound, &mut tape, x).map_err(|e| party_err("client", e))?;
    let upload = match &client.extension {
        None => v,
        Some(g) => {
            // the generator is only trained in the attacker's own loop
            let gb = g.bind(&mut tape);
            let p = g.forward(&gb, &mut tape, v)?;
            tape.concat_cols(&[v, p])?
        }
    };
    Ok(ClientPass { tape, bound, upload })
}

fn client_backward(client: &ClientModel, pass: &ClientPass, cut_gradient: Tensor2) -> Result<MlpParams> {
    let grads: Gradients = pass.tape.backward_with(pass.upload, cut_gradient)?;
    Ok(client.bottom.grads(&pass.bound, &grads))
}

/// One protocol round on a batch, returning gradients without updating anything.
pub fn batch_gradients(
    model: &SplitModel,
    ds_rows: BatchView<'_>,
    objective: &HostObjective,
) -> Result<SplitGradients> {
    model.check_geometry()?;
    let pass = client_forward(&model.client, ds_rows.x_c)?;
    let upload = pass.tape.value(pass.upload).clone();
    let reply =
        host_step(&model.host, &upload, ds_rows.x_h, ds_rows.rows, ds_rows.labels, ds_rows.class_count, objective)?;
    let client_bottom = client_backward(&model.client, &pass, reply.cut_gradient.clone())?;
    Ok(SplitGradients {
        loss: reply.loss,
        client_bottom,
        host_bottom: reply.host_bottom,
        top: reply.top,
        cut_gradient: reply.cut_gradient,
    })
}

/// A batch as seen by the protocol: both parties' inputs plus the row ids
/// used to look up host-side targets.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a> {
    pub x_c: &'a Tensor2,
    pub x_h: &'a Tensor2,
    pub rows: &'a [usize],
    pub labels: &'a [usize],
    pub class_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_accuracy)
    }
}

/// Client-side work between epochs, e.g. refreshing a perturbation generator.
pub trait EpochHook {
    fn before_epoch(&mut self, epoch: usize, client: &mut ClientModel) -> Result<()>;
}

/// Batch boundaries; a trailing batch of one row is merged into its predecessor.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let k = out.len() - 1;
        let start = k * batch_size;
        out[k] = &order[start..];
    }
    out
}

/// Cached party inputs for a dataset.
struct Inputs {
    x_c: Tensor2,
    x_h: Tensor2,
}

impl Inputs {
    fn of(ds: &VerticalDataset) -> Inputs {
        Inputs { x_c: ds.client_input(), x_h: ds.host_input() }
    }
}

fn view_loss(
    model: &SplitModel,
    inputs: &Inputs,
    ds: &VerticalDataset,
    rows: &[usize],
    objective: &HostObjective,
) -> Result<f64> {
    let x_c = inputs.x_c.select_rows(rows);
    let x_h = inputs.x_h.select_rows(rows);
    let labels: Vec<usize> = rows.iter().map(|&r| ds.labels[r]).collect();
    let up = model.client.upload(&x_c)?;
    let mut tape = Tape::new();
    let upi = tape.leaf(up);
    let hb = model.host.bottom.bind(&mut tape);
    let top = model.host.top.bind(&mut tape);
    let xh = tape.leaf(x_h);
    let vh = model.host.bottom.forward(&hb, &mut tape, xh)?;
    let z = tape.concat_cols(&[upi, vh])?;
    let out = model.host.top.forward(&top, &mut tape, z)?;
    let loss = objective.loss(&mut tape, out, upi, rows, &labels, ds.class_count)?;
    tape.value(loss).item()
}

/// Objective over the whole dataset, averaged over fixed consecutive chunks
/// of `batch_size` rows (weighted by chunk size).
pub fn evaluate_loss(
    model: &SplitModel,
    ds: &VerticalDataset,
    objective: &HostObjective,
    batch_size: usize,
) -> Result<f64> {
    let inputs = Inputs::of(ds);
    eval_loss_cached(model, &inputs, ds, objective, batch_size)
}

fn eval_loss_cached(
    model: &SplitModel,
    inputs: &Inputs,
    ds: &VerticalDataset,
    objective: &HostObjective,
    batch_size: usize,
) -> Result<f64> {
    let order: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for b in batches(&order, batch_size.max(2)) {
        total += view_loss(model, inputs, ds, b, objective)? * b.len() as f64;
    }
    Ok(total / ds.len().max(1) as f64)
}

/// Fraction of rows whose decoded prediction equals the true label.
pub fn evaluate_accuracy(model: &SplitModel, ds: &VerticalDataset, decoding: &Decoding) -> Result<f64> {
    let pred = predict(model, &ds.client_input(), &ds.host_input(), decoding)?;
    crate::stats::accuracy(&pred, &ds.labels)
}

/// Minibatch protocol training. Each party keeps its own optimizer; rows are
/// reshuffled every epoch from `substream(seed, Shuffle, epoch)`.
pub fn train(
    model: &mut SplitModel,
    train_ds: &VerticalDataset,
    validation: Option<&VerticalDataset>,
    objective: &HostObjective,
    decoding: &Decoding,
    cfg: &TrainConfig,
    mut hook: Option<&mut dyn EpochHook>,
) -> Result<History> {
    cfg.validate()?;
    model.check_geometry()?;
    if train_ds.len() < 2 {
        return Err(Error::contract("training needs at least two rows"));
    }
    if let HostObjective::SoftMse { targets } = objective {
        if targets.len() != train_ds.len() {
            return Err(Error::dim("soft targets", train_ds.len(), targets.len()));
        }
    }
    let inputs = Inputs::of(train_ds);
    let mut opt_client = Optimizer::new(cfg.optimizer)?;
    let mut opt_host = Optimizer::new(cfg.optimizer)?;
    let mut opt_top = Optimizer::new(cfg.optimizer)?;
    let initial_loss = eval_loss_cached(model, &inputs, train_ds, objective, cfg.batch_size)?;
    let mut history = History { initial_loss, epochs: Vec::with_capacity(cfg.epochs) };

    for epoch in 0..cfg.epochs {
        if let Some(h) = hook.as_deref_mut() {
            h.before_epoch(epoch, &mut model.client)?;
            model.check_geometry()?;
        }
        let mut order: Vec<usize> = (0..train_ds.len()).collect();
        let mut rng: Rng = substream(cfg.seed, Stream::Shuffle, epoch as u64);
        order.shuffle(&mut rng);
        for (bi, rows) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let x_c = inputs.x_c.select_rows(rows);
            let x_h = inputs.x_h.select_rows(rows);
            let labels: Vec<usize> = rows.iter().map(|&r| train_ds.labels[r]).collect();
            let view = BatchView { x_c: &x_c, x_h: &x_h, rows, labels: &labels, class_count: train_ds.class_count };
            let g = batch_gradients(model, view, objective).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("{m} at epoch {epoch}, batch {bi}")),
                other => other,
            })?;
            opt_client.step(&mut model.client.bottom.params, &g.client_bottom)?;
            opt_host.step(&mut model.host.bottom.params, &g.host_bottom)?;
            opt_top.step(&mut model.host.top.params, &g.top)?;
        }
        let train_loss = eval_loss_cached(model, &inputs, train_ds, objective, cfg.batch_size)?;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
        }
        let val_accuracy = match validation {
            Some(v) if !v.is_empty() => Some(evaluate_accuracy(model, v, decoding)?),
            _ => None,
        };
        log::debug!("epoch {epoch}: loss {train_loss:.5} val_acc {val_accuracy:?}");
        history.epochs.push(EpochRecord { epoch, train_loss, val_accuracy });
    }
    Ok(history)
}

/// Undefended training: cross-entropy, argmax decoding.
pub fn train_plain(
    model: &mut SplitModel,
    train_ds: &VerticalDataset,
    validation: Option<&VerticalDataset>,
    cfg: &TrainConfig,
) -> Result<History> {
    train(model, train_ds, validation, &HostObjective::CrossEntropy, &Decoding::Argmax, cfg, None)
}

/// Cut-layer snapshot for the first rows of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CutTrace {
    pub row_ids: Vec<usize>,
    /// Uploaded client embedding, including any extension columns.
    pub client: Tensor2,
    pub host: Tensor2,
    /// `dL/d(client upload)` for the traced rows taken as one batch.
    pub client_gradient: Tensor2,
}

impl CutTrace {
    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }
}

/// Records embeddings and the returned gradient for up to `sample_limit`
/// rows. Never mutates the model.
pub fn record_cut_trace(
    model: &SplitModel,
    ds: &VerticalDataset,
    objective: &HostObjective,
    sample_limit: usize,
) -> Result<CutTrace> {
    model.check_geometry()?;
    let n = sample_limit.min(ds.len());
    let rows: Vec<usize> = (0..n).collect();
    let x_c = ds.client_input().head_rows(n);
    let x_h = ds.host_input().head_rows(n);
    let client = model.client.upload(&x_c)?;
    let host = model.host.bottom.predict(&x_h)?;
    let client_gradient = if n >= 2 {
        let labels = ds.labels[..n].to_vec();
        host_step(&model.host, &client, &x_h, &rows, &labels, ds.class_count, objective)?.cut_gradient
    } else {
        Tensor2::zeros(n, client.cols())
    };
    Ok(CutTrace { row_ids: rows, client, host, client_gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, train_validation_split, BlobSpec};
    use crate::nd::Layer;

    fn blobs(seed: u64, spread: f64) -> crate::data::DataSplits {
        let spec = BlobSpec { class_count: 2, client_dims: 3, host_dims: 3, n_per_class: 150, cluster_spread: spread };
        let ds = synth_blobs(&spec, &mut stream(seed, Stream::Data)).unwrap();
        train_validation_split(&ds, 0.2, &mut stream(seed, Stream::Split)).unwrap()
    }

    fn cfg(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig { epochs, batch_size: 32, optimizer: OptimizerConfig::sgd(0.05), seed }
    }

    #[test]
    fn identity_networks_pass_inputs_through() {
        let id = |n: usize| {
            Mlp::from_params(
                MlpSpec::relu(&[n, n]).unwrap(),
                MlpParams { layers: vec![Layer { weight: Tensor2::identity(n), bias: Tensor2::zeros(1, n) }] },
            )
            .unwrap()
        };
        let model = SplitModel {
            client: ClientModel { bottom: id(2), extension: None },
            host: HostModel { bottom: id(1), top: id(3) },
        };
        let x_c = Tensor2::from_vec(1, 2, vec![1.0, -2.0]).unwrap();
        let x_h = Tensor2::from_vec(1, 1, vec![5.0]).unwrap();
        assert_eq!(joint_forward(&model, &x_c, &x_h).unwrap().data(), &[1.0, -2.0, 5.0]);
    }

    #[test]
    fn geometry_mismatch_is_a_protocol_error() {
        let mut arch = SplitArchitecture::desk_default(3, 3, 2);
        let mut model = SplitModel::init(&arch, 1).unwrap();
        arch.extension_width = 4;
        model.client.extension = SplitModel::init(&arch, 1).unwrap().client.extension;
        assert!(matches!(model.check_geometry(), Err(Error::Protocol(_))));
        let fixed = SplitModel::init(&arch, 1).unwrap();
        assert_eq!(fixed.host.top.input_width(), 24);
        fixed.check_geometry().unwrap();
    }

    #[test]
    fn wrong_client_width_names_party() {
        let model = SplitModel::init(&SplitArchitecture::desk_default(3, 3, 2), 1).unwrap();
        let err = joint_forward(&model, &Tensor2::zeros(2, 4), &Tensor2::zeros(2, 3)).unwrap_err();
        assert!(err.to_string().contains("client"), "{err}");
    }

    #[test]
    fn argmax_ties_go_low() {
        let out = Tensor2::from_vec(2, 2, vec![0.1, 0.9, 0.5, 0.5]).unwrap();
        assert_eq!(Decoding::Argmax.decode(&out), vec![1, 0]);
    }

    #[test]
    fn batches_merge_singletons() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(batches(&order, 3).len(), 3);
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let s = blobs(1, 0.2);
        let mut model = SplitModel::init(&SplitArchitecture::desk_default(3, 3, 2), 1).unwrap();
        let before = model.clone();
        let h = train_plain(&mut model, &s.train, Some(&s.validation), &cfg(0, 1)).unwrap();
        assert_eq!(model, before);
        assert!(h.epochs.is_empty());
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let s = blobs(2, 0.05);
        let mut model = SplitModel::init(&SplitArchitecture::desk_default(3, 3, 2), 2).unwrap();
        let h = train_plain(&mut model, &s.train, Some(&s.validation), &cfg(30, 2)).unwrap();
        let acc = h.final_val_accuracy().unwrap();
        assert!(acc >= 0.99, "{acc}");
        assert_eq!(acc, evaluate_accuracy(&model, &s.validation, &Decoding::Argmax).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let s = blobs(3, 0.3);
        let run = || {
            let mut m = SplitModel::init(&SplitArchitecture::desk_default(3, 3, 2), 3).unwrap();
            let h = train_plain(&mut m, &s.train, Some(&s.validation), &cfg(3, 3)).unwrap();
            (m, h)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cut_trace_matches_direct_forward() {
        let s = blobs(4, 0.3);
        let model = SplitModel::init(&SplitArchitecture::desk_default(3, 3, 2), 4).unwrap();
        let before = model.clone();
        let t = record_cut_trace(&model, &s.train, &HostObjective::CrossEntropy, 16).unwrap();
        assert_eq!(t.client, model.client.bottom.predict(&s.train.client_input().head_rows(16)).unwrap());
        assert_eq!(t.client.cols(), 10);
        assert_eq!(model, before);
        assert!(record_cut_trace(&model, &s.train, &HostObjective::CrossEntropy, 0).unwrap().is_empty());
    }
}
