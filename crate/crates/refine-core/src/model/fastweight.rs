//! The fast-weight memory matrix and its closed-form update rules.
//!
//! Conventions follow the math: `W` maps key-space column vectors,
//! `apply(W, q) = W q`, and the squared-error delta rule is
//! `W' = W - eta * (W k - v) k^T`. These are the reference ops the taped
//! forward pass must agree with.

use crate::error::{Error, Result};
use crate::numerics::Array;

#[derive(Clone, Debug)]
pub struct FastWeightState {
    matrix: Array,
    position: usize,
}

impl FastWeightState {
    /// Zero memory; every sequence starts here.
    pub fn zero(d_fast: usize) -> Self {
        FastWeightState {
            matrix: Array::zeros(&[d_fast, d_fast]),
            position: 0,
        }
    }

    pub fn new(matrix: Array, position: usize) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.shape()[0] != matrix.shape()[1] {
            return Err(Error::invalid(format!(
                "fast-weight matrix must be square, got {:?}",
                matrix.shape()
            )));
        }
        if !matrix.all_finite() {
            return Err(Error::NonFinite("fast-weight matrix".into()));
        }
        Ok(FastWeightState { matrix, position })
    }

    pub fn matrix(&self) -> &Array {
        &self.matrix
    }

    /// Number of tokens this state has incorporated.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[0]
    }

    fn check_vec(&self, name: &'static str, v: &Array) -> Result<()> {
        if v.numel() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.matrix.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        if !v.all_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        Ok(())
    }

    /// Retrieve: `W q`.
    pub fn apply(&self, q: &Array) -> Result<Array> {
        self.check_vec("apply", q)?;
        let d = self.dim();
        let w = self.matrix.data();
        let qd = q.data();
        let mut out = Vec::with_capacity(d);
        for j in 0..d {
            let row = &w[j * d..(j + 1) * d];
            let acc: f64 = row
                .iter()
                .zip(qd)
                .map(|(&wv, &qv)| (wv as f64) * (qv as f64))
                .sum();
            out.push(acc as f32);
        }
        Ok(Array::from_parts(vec![d], out))
    }

    /// One delta-rule step: `W' = W - eta * (W k - v) k^T`. Pure; the input
    /// state is unchanged.
    pub fn delta_step(&self, k: &Array, v: &Array, eta: f32) -> Result<FastWeightState> {
        self.check_vec("delta_rule_step", k)?;
        self.check_vec("delta_rule_step", v)?;
        if !eta.is_finite() {
            return Err(Error::NonFinite("delta_rule_step eta".into()));
        }
        let d = self.dim();
        let err = {
            let wk = self.apply(k)?;
            let mut e = Vec::with_capacity(d);
            for (w, t) in wk.data().iter().zip(v.data()) {
                e.push(w - t);
            }
            e
        };
        let w = self.matrix.data();
        let kd = k.data();
        let mut out = Vec::with_capacity(d * d);
        for j in 0..d {
            for i in 0..d {
                out.push(w[j * d + i] - eta * (err[j] * kd[i]));
            }
        }
        Ok(FastWeightState {
            matrix: Array::from_parts(vec![d, d], out),
            position: self.position + 1,
        })
    }

    /// Chunked update: one step along the mean of the per-pair delta-rule
    /// gradients, all evaluated at the current state.
    /// `W' = W - eta * mean_i (W k_i - v_i) k_i^T`.
    pub fn chunked_step(&self, keys: &[Array], values: &[Array], eta: f32) -> Result<FastWeightState> {
        if keys.is_empty() {
            return Err(Error::invalid("chunked_update_step: empty chunk"));
        }
        if keys.len() != values.len() {
            return Err(Error::invalid(format!(
                "chunked_update_step: {} keys vs {} values",
                keys.len(),
                values.len()
            )));
        }
        if !eta.is_finite() {
            return Err(Error::NonFinite("chunked_update_step eta".into()));
        }
        let d = self.dim();
        let mut grad = vec![0.0f64; d * d];
        for (k, v) in keys.iter().zip(values) {
            self.check_vec("chunked_update_step", k)?;
            self.check_vec("chunked_update_step", v)?;
            let wk = self.apply(k)?;
            for j in 0..d {
                let err = (wk.data()[j] - v.data()[j]) as f64;
                for i in 0..d {
                    grad[j * d + i] += err * (k.data()[i] as f64);
                }
            }
        }
        let scale = eta as f64 / keys.len() as f64;
        let w = self.matrix.data();
        let out: Vec<f32> = w
            .iter()
            .zip(&grad)
            .map(|(&wv, &g)| ((wv as f64) - scale * g) as f32)
            .collect();
        Ok(FastWeightState {
            matrix: Array::from_parts(vec![d, d], out),
            position: self.position + keys.len(),
        })
    }
}
