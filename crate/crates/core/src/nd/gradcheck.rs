//! Central finite-difference check of taped gradients.

use crate::error::{Error, Result};
use crate::nd::tape::{Tape, ValueId};
use crate::nd::tensor::Tensor2;

/// Compares the taped gradient of a scalar program at `point` against central
/// differences and returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
///
/// `program` receives a fresh tape and the leaf holding the input and must
/// return a `1 x 1` value.
pub fn grad_check<F>(program: F, point: &Tensor2, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, ValueId) -> Result<ValueId>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::contract(format!("epsilon must be in (0, 1e-3], got {epsilon}")));
    }
    let eval = |x: &Tensor2| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let out = program(&mut tape, leaf)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric("program produced a non-finite value".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(point.clone());
    let out = program(&mut tape, leaf)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get_or_zeros(leaf, point);
    if !analytic.is_finite() {
        return Err(Error::Numeric("analytic gradient is non-finite".into()));
    }

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
