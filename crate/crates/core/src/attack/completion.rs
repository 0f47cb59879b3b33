//! Model completion: a classification head fitted on top of a copy of the
//! client's bottom network using the auxiliary labels.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::AuxiliarySet;
use crate::error::{Error, Result};
use crate::nd::{Mlp, MlpSpec, Optimizer, OptimizerConfig, Tape, Tensor2};
use crate::rng::{stream, substream, Stream};
use crate::stats::{accuracy, per_class_accuracy};

const PSEUDO_LABEL_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Hidden widths of the inference head (`cut -> hidden.. -> C`).
    pub head_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Train the bottom copy together with the head instead of freezing it.
    pub fine_tune_bottom: bool,
    /// One self-training round on confidently predicted unlabeled client rows.
    pub pseudo_label: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            head_hidden: vec![16],
            epochs: 40,
            batch_size: 16,
            optimizer: OptimizerConfig::adam(3e-3),
            fine_tune_bottom: false,
            pseudo_label: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("attack batch_size must be >= 1".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    RUpper,
    RLower,
    Defended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack_top1: f64,
    pub per_class: Vec<Option<f64>>,
    pub aux_size: usize,
    pub scenario: Scenario,
}

/// Rows the attack is scored on: client inputs and their true labels.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub client_input: &'a Tensor2,
    pub labels: &'a [usize],
}

/// The attacker's stand-in for the host's top network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowModel {
    pub bottom: Mlp,
    pub head: Mlp,
}

impl ShadowModel {
    pub fn new(bottom: Mlp, head_hidden: &[usize], class_count: usize, seed: u64) -> Result<ShadowModel> {
        let mut widths = vec![bottom.output_width()];
        widths.extend_from_slice(head_hidden);
        widths.push(class_count);
        let head = Mlp::init(&MlpSpec::relu(&widths)?, &mut stream(seed, Stream::Attack))?;
        Ok(ShadowModel { bottom, head })
    }

    pub fn logits(&self, x_c: &Tensor2) -> Result<Tensor2> {
        self.head.predict(&self.bottom.predict(x_c)?)
    }

    pub fn predict(&self, x_c: &Tensor2) -> Result<Vec<usize>> {
        Ok(self.logits(x_c)?.argmax_rows())
    }

    /// Minibatch cross-entropy on `(x, y)`; the bottom only moves when `train_bottom`.
    pub fn fit(&mut self, x: &Tensor2, y: &[usize], cfg: &AttackConfig, train_bottom: bool, seed: u64) -> Result<()> {
        cfg.validate()?;
        if x.rows() != y.len() {
            return Err(Error::dim("attack training labels", x.rows(), y.len()));
        }
        if y.is_empty() {
            return Err(Error::contract("attack training set is empty"));
        }
        let mut opt_head = Optimizer::new(cfg.optimizer)?;
        let mut opt_bottom = Optimizer::new(cfg.optimizer)?;
        let frozen = if train_bottom { None } else { Some(self.bottom.predict(x)?) };
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..y.len()).collect();
            order.shuffle(&mut substream(seed, Stream::Attack, epoch as u64));
            for rows in order.chunks(cfg.batch_size) {
                let labels: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
                let mut tape = Tape::new();
                let hb = self.head.bind(&mut tape);
                let (emb, bb) = match &frozen {
                    Some(e) => (tape.leaf(e.select_rows(rows)), None),
                    None => {
                        let bb = self.bottom.bind(&mut tape);
                        let xi = tape.leaf(x.select_rows(rows));
                        (self.bottom.forward(&bb, &mut tape, xi)?, Some(bb))
                    }
                };
                let out = self.head.forward(&hb, &mut tape, emb)?;
                let loss = tape.softmax_cross_entropy(out, &labels)?;
                if !tape.value(loss).item()?.is_finite() {
                    return Err(Error::Numeric(format!("attack head diverged at epoch {epoch}")));
                }
                let grads = tape.backward(loss)?;
                let gh = self.head.grads(&hb, &grads);
                opt_head.step(&mut self.head.params, &gh)?;
                if let Some(bb) = bb {
                    let gb = self.bottom.grads(&bb, &grads);
                    opt_bottom.step(&mut self.bottom.params, &gb)?;
                }
            }
        }
        Ok(())
    }

    pub fn report(
        &self,
        eval: EvalSet<'_>,
        aux_size: usize,
        class_count: usize,
        scenario: Scenario,
    ) -> Result<AttackReport> {
        let pred = self.predict(eval.client_input)?;
        Ok(AttackReport {
            attack_top1: accuracy(&pred, eval.labels)?,
            per_class: per_class_accuracy(&pred, eval.labels, class_count)?,
            aux_size,
            scenario,
        })
    }
}

fn softmax_max(logits: &Tensor2) -> Vec<(usize, f64)> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let arg = row.iter().position(|&v| v == m).unwrap_or(0);
            (arg, 1.0 / denom)
        })
        .collect()
}

/// Fits a head on a frozen (or fine-tuned) copy of `bottom` using the
/// auxiliary set and scores it on `eval`. `bottom` itself is never modified.
///
/// `unlabeled` is the client's own input matrix, used only for pseudo-labeling.
pub fn model_completion_attack(
    bottom: &Mlp,
    aux: &AuxiliarySet,
    eval: EvalSet<'_>,
    unlabeled: Option<&Tensor2>,
    cfg: &AttackConfig,
    scenario: Scenario,
    seed: u64,
) -> Result<(ShadowModel, AttackReport)> {
    if aux.is_empty() {
        return Err(Error::contract("auxiliary set is empty"));
    }
    let mut seen = vec![false; aux.class_count];
    for &y in &aux.labels {
        seen[y] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        log::warn!("auxiliary set has no rows of class {missing}");
    }
    let mut shadow = ShadowModel::new(bottom.clone(), &cfg.head_hidden, aux.class_count, seed)?;
    shadow.fit(&aux.client_input, &aux.labels, cfg, cfg.fine_tune_bottom, seed)?;

    if cfg.pseudo_label {
        if let Some(u) = unlabeled {
            let confident: Vec<(usize, usize)> = softmax_max(&shadow.logits(u)?)
                .into_iter()
                .enumerate()
                .filter(|(_, (_, p))| *p >= PSEUDO_LABEL_CONFIDENCE)
                .map(|(i, (c, _))| (i, c))
                .collect();
            let rows: Vec<usize> = confident.iter().map(|&(i, _)| i).collect();
            let x = Tensor2::vcat(&[&aux.client_input, &u.select_rows(&rows)])?;
            let mut y = aux.labels.clone();
            y.extend(confident.iter().map(|&(_, c)| c));
            log::debug!("pseudo-labeling adds {} rows", rows.len());
            shadow.fit(&x, &y, cfg, cfg.fine_tune_bottom, seed ^ 0x5EED)?;
        }
    }
    let report = shadow.report(eval, aux.len(), aux.class_count, scenario)?;
    Ok((shadow, report))
}

/// Lower reference: the same shadow architecture on a freshly initialized
/// bottom, trained end to end on the auxiliary set alone.
pub fn compute_r_lower(
    bottom_spec: &MlpSpec,
    aux: &AuxiliarySet,
    eval: EvalSet<'_>,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackReport> {
    let fresh = Mlp::init(bottom_spec, &mut stream(seed, Stream::Reference))?;
    let mut shadow = ShadowModel::new(fresh, &cfg.head_hidden, aux.class_count, seed)?;
    shadow.fit(&aux.client_input, &aux.labels, cfg, true, seed)?;
    shadow.report(eval, aux.len(), aux.class_count, Scenario::RLower)
}
