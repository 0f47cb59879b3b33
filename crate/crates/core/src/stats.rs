//! Dependence measures and accuracy metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::{Tape, Tensor2, ValueId};

/// Below this distance variance a sample is treated as constant and the
/// distance correlation is defined as zero.
pub const DEGENERATE_DVAR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    OneHot,
    Scalar,
}

/// How class labels are turned into a matrix for dependence measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEncoding {
    pub mode: EncodingMode,
    pub class_count: usize,
}

impl LabelEncoding {
    pub fn one_hot(class_count: usize) -> Self {
        LabelEncoding { mode: EncodingMode::OneHot, class_count }
    }

    pub fn encode(&self, labels: &[usize]) -> Result<Tensor2> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::contract(format!("label {bad} outside 0..{}", self.class_count)));
        }
        Ok(match self.mode {
            EncodingMode::OneHot => {
                Tensor2::from_fn(labels.len(), self.class_count, |r, c| if labels[r] == c { 1.0 } else { 0.0 })
            }
            EncodingMode::Scalar => Tensor2::column(&labels.iter().map(|&y| y as f64).collect::<Vec<_>>()),
        })
    }
}

/// Double-centered distance matrix on the tape.
fn centered_distances(tape: &mut Tape, x: ValueId) -> Result<ValueId> {
    let d = tape.pairwise_dist(x);
    let row = tape.row_means(d);
    let col = tape.col_means(d);
    let grand = tape.mean(d);
    let a = tape.sub(d, row)?;
    let a = tape.sub(a, col)?;
    tape.add(a, grand)
}

/// Sample distance correlation of the rows of `x` and `y`, recorded on `tape`.
///
/// Returns a `1 x 1` value differentiable with respect to `x` (and `y`).
/// If either sample has distance variance below [`DEGENERATE_DVAR`] the
/// result is a constant zero.
pub fn distance_correlation_on_tape(tape: &mut Tape, x: ValueId, y: ValueId) -> Result<ValueId> {
    let (n, ny) = (tape.value(x).rows(), tape.value(y).rows());
    if n != ny {
        return Err(Error::dim("distance_correlation rows", n, ny));
    }
    if n < 2 {
        return Err(Error::contract(format!("distance correlation needs n >= 2, got {n}")));
    }
    let a = centered_distances(tape, x)?;
    let b = centered_distances(tape, y)?;
    let ab = tape.mul(a, b)?;
    let aa = tape.mul(a, a)?;
    let bb = tape.mul(b, b)?;
    let dcov2 = tape.mean(ab);
    let dvar2_x = tape.mean(aa);
    let dvar2_y = tape.mean(bb);
    let dvar_x = tape.sqrt(dvar2_x)?;
    let dvar_y = tape.sqrt(dvar2_y)?;
    if tape.value(dvar_x).get(0, 0) < DEGENERATE_DVAR || tape.value(dvar_y).get(0, 0) < DEGENERATE_DVAR {
        return Ok(tape.leaf(Tensor2::scalar(0.0)));
    }
    let denom = tape.mul(dvar_x, dvar_y)?;
    let dcor2 = tape.div(dcov2, denom)?;
    tape.sqrt(dcor2)
}

/// Sample distance correlation (V-statistic) of the rows of `x` and `y`, in `[0, 1]`.
pub fn distance_correlation(x: &Tensor2, y: &Tensor2) -> Result<f64> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::Numeric("distance correlation of non-finite input".into()));
    }
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let yi = tape.leaf(y.clone());
    let out = distance_correlation_on_tape(&mut tape, xi, yi)?;
    Ok(tape.value(out).get(0, 0))
}

/// Per-column Pearson correlation against a scalar target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonReport {
    pub correlations: Vec<f64>,
    /// Columns with zero variance; their correlation is reported as 0.
    pub constant_columns: Vec<usize>,
}

pub fn pearson_per_dimension(e: &Tensor2, y: &[f64]) -> Result<PearsonReport> {
    let (n, d) = e.shape();
    if y.len() != n {
        return Err(Error::dim("pearson_per_dimension target", n, y.len()));
    }
    if n < 2 {
        return Err(Error::contract("pearson correlation needs n >= 2"));
    }
    let my = y.iter().sum::<f64>() / n as f64;
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let syy: f64 = dy.iter().map(|v| v * v).sum();
    if syy <= 0.0 {
        return Err(Error::contract("pearson target has zero variance"));
    }
    let means = e.col_means();
    let mut correlations = Vec::with_capacity(d);
    let mut constant_columns = Vec::new();
    for c in 0..d {
        let mc = means.get(0, c);
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (r, dyr) in dy.iter().enumerate() {
            let dx = e.get(r, c) - mc;
            sxy += dx * dyr;
            sxx += dx * dx;
        }
        if sxx <= 0.0 {
            log::warn!("pearson: column {c} is constant, reporting 0");
            constant_columns.push(c);
            correlations.push(0.0);
        } else {
            correlations.push((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0));
        }
    }
    Ok(PearsonReport { correlations, constant_columns })
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dim("accuracy", truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::contract("accuracy of an empty set"));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Recall per true class; `None` for classes absent from `truth`.
pub fn per_class_accuracy(pred: &[usize], truth: &[usize], class_count: usize) -> Result<Vec<Option<f64>>> {
    if pred.len() != truth.len() {
        return Err(Error::dim("per_class_accuracy", truth.len(), pred.len()));
    }
    let mut hits = vec![0usize; class_count];
    let mut totals = vec![0usize; class_count];
    for (&p, &t) in pred.iter().zip(truth) {
        if t >= class_count {
            return Err(Error::contract(format!("label {t} outside 0..{class_count}")));
        }
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    Ok(hits.iter().zip(&totals).map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64)).collect())
}
