//! Dense row-major f32 arrays, immutable after construction.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major array of f32 values. Cloning is cheap (shared storage), and a
/// constructed array is never mutated, so arrays are safe to share across
/// threads.
#[derive(Clone, Debug)]
pub struct Array {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
}

impl Array {
    /// Construct from raw data, validating length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!(
                "array dimensions must be positive, got {shape:?}"
            )));
        }
        if data.len() != numel {
            return Err(Error::invalid(format!(
                "array data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                numel
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("array construction {shape:?}")));
        }
        Ok(Array {
            shape,
            data: Arc::new(data),
        })
    }

    /// Construct without the finiteness scan. For op outputs on hot paths;
    /// shape/length must still agree.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Array {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(v: f32) -> Self {
        Array::from_parts(vec![1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Array::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        let n = shape.iter().product();
        Array::from_parts(shape.to_vec(), vec![v; n])
    }

    /// Uniform values in [-scale, scale), deterministic for a given rng state.
    pub fn uniform(shape: &[usize], scale: f32, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        Array::from_parts(shape.to_vec(), data)
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::invalid("from_rows: ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Array::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value; panics if the array is not a single element.
    pub fn item(&self) -> f32 {
        assert!(self.is_scalar(), "item() on non-scalar array");
        self.data[0]
    }

    /// Rows of a rank-2 array (a rank-1 array counts as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            r => panic!("rows() on rank-{r} array"),
        }
    }

    /// Columns of a rank-2 array (length for rank-1).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            r => panic!("cols() on rank-{r} array"),
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Same storage, new shape. Element count must match.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Array {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    /// Exact bit-level equality, for determinism checks.
    pub fn bits_eq(&self, other: &Array) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Array::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Array::new(vec![2], vec![1.0, f32::NAN]).is_err());
        assert!(Array::new(vec![2], vec![f32::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(Array::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn reshape_shares_storage() {
        let a = Array::new(vec![2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let b = a.reshaped(vec![3, 2]).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.reshaped(vec![4, 2]).is_err());
    }
}
