//! Minimal dense numerics with reverse-mode differentiation.
//!
//! [`Array`] is the storage type (row-major f32, immutable, cheap to clone),
//! [`ops`] holds the pure forward kernels, and [`Tape`] records computations
//! for [`Tape::backward`]. [`finite_diff_check`] is the gradient oracle used
//! throughout the test suites.

mod array;
pub mod ops;
mod tape;

pub use array::Array;
pub use tape::{Gradients, Tape, ValueId};

use crate::error::{Error, Result};
use crate::parallel::par_map_range;

/// Evaluate `f` forward-only at the given parameter value.
fn eval_scalar<F>(f: &F, params: &Array) -> Result<f64>
where
    F: Fn(&mut Tape, ValueId) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let id = tape.constant(params.clone());
    let loss = f(&mut tape, id)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::invalid(format!(
            "finite_diff_check: loss must be scalar, got {:?}",
            v.shape()
        )));
    }
    let out = v.item() as f64;
    if !out.is_finite() {
        return Err(Error::NonFinite("finite_diff_check loss".into()));
    }
    Ok(out)
}

/// Compare the analytic gradient of a scalar function against central finite
/// differences, returning max over coordinates of
/// `|analytic - numeric| / (|numeric| + 1e-8)`.
pub fn finite_diff_check<F>(f: F, params: &Array, step: f32) -> Result<f64>
where
    F: Fn(&mut Tape, ValueId) -> Result<ValueId> + Sync,
{
    if step <= 0.0 {
        return Err(Error::invalid("finite_diff_check: step must be positive"));
    }
    // analytic gradient
    let mut tape = Tape::new();
    let id = tape.tracked(params.clone());
    let loss = f(&mut tape, id)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::invalid("finite_diff_check: loss must be scalar"));
    }
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite("finite_diff_check loss".into()));
    }
    let mut grads = tape.backward(loss)?;
    let analytic = grads.take(id).expect("tracked leaf always has a gradient");

    // central differences, one coordinate at a time
    let results = par_map_range(params.numel(), |i| -> Result<f64> {
        let mut plus = params.data().to_vec();
        let mut minus = plus.clone();
        plus[i] += step;
        minus[i] -= step;
        let fp = eval_scalar(&f, &Array::from_parts(params.shape().to_vec(), plus))?;
        let fm = eval_scalar(&f, &Array::from_parts(params.shape().to_vec(), minus))?;
        let numeric = (fp - fm) / (2.0 * step as f64);
        let a = analytic.data()[i] as f64;
        Ok((a - numeric).abs() / (numeric.abs() + 1e-8))
    });

    let mut max_err = 0.0f64;
    for r in results {
        max_err = max_err.max(r?);
    }
    Ok(max_err)
}
