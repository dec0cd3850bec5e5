//! Forward kernels for every primitive.
//!
//! All kernels are pure functions of their inputs. Storage is f32; dot
//! products, reductions, softmax, and norms accumulate in f64 so long
//! sequences stay stable and finite-difference checks are clean. Shapes must
//! conform exactly; the only broadcasts are the explicit row-wise bias/gain
//! ops. Rank-1 arrays act as single rows.

use crate::error::{Error, Result};
use crate::numerics::Array;

fn shape_err(op: &'static str, a: &Array, b: &Array) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// out = a @ b; a is m x k, b is k x n. A rank-1 lhs yields a rank-1 result.
pub fn matmul(a: &Array, b: &Array) -> Result<Array> {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    if k != kb {
        return Err(shape_err("matmul", a, b));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &ad[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            // f64 accumulation, fixed order over p.
            for (o, &bv) in acc.iter_mut().zip(brow) {
                *o += (av as f64) * (bv as f64);
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    let shape = if a.shape().len() == 1 {
        vec![n]
    } else {
        vec![m, n]
    };
    Ok(Array::from_parts(shape, out))
}

macro_rules! zip_op {
    ($name:ident, $opname:literal, $f:expr) => {
        pub fn $name(a: &Array, b: &Array) -> Result<Array> {
            if a.shape() != b.shape() {
                return Err(shape_err($opname, a, b));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| $f(x, y))
                .collect();
            Ok(Array::from_parts(a.shape().to_vec(), data))
        }
    };
}

zip_op!(add, "add", |x: f32, y: f32| x + y);
zip_op!(sub, "sub", |x: f32, y: f32| x - y);
zip_op!(mul, "mul", |x: f32, y: f32| x * y);
zip_op!(min_elem, "min_elem", |x: f32, y: f32| if x <= y {
    x
} else {
    y
});

pub fn scale(a: &Array, c: f32) -> Array {
    let data = a.data().iter().map(|&x| x * c).collect();
    Array::from_parts(a.shape().to_vec(), data)
}

pub fn exp(a: &Array) -> Array {
    let data = a.data().iter().map(|&x| x.exp()).collect();
    Array::from_parts(a.shape().to_vec(), data)
}

pub fn clamp(a: &Array, lo: f32, hi: f32) -> Array {
    let data = a.data().iter().map(|&x| x.clamp(lo, hi)).collect();
    Array::from_parts(a.shape().to_vec(), data)
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// x * sigmoid(x)
pub fn silu(a: &Array) -> Array {
    let data = a.data().iter().map(|&x| x * sigmoid(x)).collect();
    Array::from_parts(a.shape().to_vec(), data)
}

/// Row-wise bias: out[i][j] = a[i][j] + bias[j].
pub fn add_row(a: &Array, bias: &Array) -> Result<Array> {
    let (m, n) = (a.rows(), a.cols());
    if bias.numel() != n {
        return Err(shape_err("add_row", a, bias));
    }
    let bd = bias.data();
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        data.extend(a.row(i).iter().zip(bd).map(|(&x, &b)| x + b));
    }
    Ok(Array::from_parts(a.shape().to_vec(), data))
}

/// Row-wise gain: out[i][j] = a[i][j] * gain[j].
pub fn mul_row(a: &Array, gain: &Array) -> Result<Array> {
    let (m, n) = (a.rows(), a.cols());
    if gain.numel() != n {
        return Err(shape_err("mul_row", a, gain));
    }
    let gd = gain.data();
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        data.extend(a.row(i).iter().zip(gd).map(|(&x, &g)| x * g));
    }
    Ok(Array::from_parts(a.shape().to_vec(), data))
}

/// Per-row softmax with max subtraction and f64 accumulation.
pub fn softmax_rows(a: &Array) -> Array {
    let (m, n) = (a.rows(), a.cols());
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = a.row(i);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&x| ((x as f64) - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|&e| (e / sum) as f32));
    }
    Array::from_parts(a.shape().to_vec(), data)
}

/// Per-row log-softmax: x - max - ln(sum exp(x - max)), f64 accumulation.
pub fn log_softmax_rows(a: &Array) -> Array {
    let (m, n) = (a.rows(), a.cols());
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = a.row(i);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse: f64 = row
            .iter()
            .map(|&x| ((x as f64) - max).exp())
            .sum::<f64>()
            .ln();
        data.extend(row.iter().map(|&x| ((x as f64) - max - lse) as f32));
    }
    Array::from_parts(a.shape().to_vec(), data)
}

pub fn sum_all(a: &Array) -> Array {
    let s: f64 = a.data().iter().map(|&x| x as f64).sum();
    Array::scalar(s as f32)
}

pub fn mean_all(a: &Array) -> Array {
    let s: f64 = a.data().iter().map(|&x| x as f64).sum();
    Array::scalar((s / a.numel() as f64) as f32)
}

/// Euclidean norm of all elements, as a scalar array.
pub fn l2_norm(a: &Array) -> Array {
    let s: f64 = a.data().iter().map(|&x| (x as f64) * (x as f64)).sum();
    Array::scalar(s.sqrt() as f32)
}

/// Per-row y = x / sqrt(sum x^2 + eps). With eps > 0 this is smooth
/// everywhere and |y| < 1, which keeps delta-rule steps contractive.
pub fn l2_normalize_rows(a: &Array, eps: f32) -> Array {
    let (m, n) = (a.rows(), a.cols());
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = a.row(i);
        let s: f64 = row.iter().map(|&x| (x as f64) * (x as f64)).sum();
        let inv = 1.0 / (s + eps as f64).sqrt();
        data.extend(row.iter().map(|&x| ((x as f64) * inv) as f32));
    }
    Array::from_parts(a.shape().to_vec(), data)
}

pub fn transpose(a: &Array) -> Array {
    let (m, n) = (a.rows(), a.cols());
    let ad = a.data();
    let mut data = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = ad[i * n + j];
        }
    }
    Array::from_parts(vec![n, m], data)
}

/// Stack arrays along the row axis. All inputs must share a column count.
pub fn concat_rows(parts: &[&Array]) -> Result<Array> {
    if parts.is_empty() {
        return Err(Error::invalid("concat_rows: empty input list"));
    }
    let n = parts[0].cols();
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.cols() != n {
            return Err(shape_err("concat_rows", parts[0], p));
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    Ok(Array::from_parts(vec![rows, n], data))
}

/// Rows [start, start+len) of a.
pub fn slice_rows(a: &Array, start: usize, len: usize) -> Result<Array> {
    let (m, n) = (a.rows(), a.cols());
    if start + len > m || len == 0 {
        return Err(Error::invalid(format!(
            "slice_rows: range {start}..{} out of {m} rows",
            start + len
        )));
    }
    let data = a.data()[start * n..(start + len) * n].to_vec();
    Ok(Array::from_parts(vec![len, n], data))
}

/// Gather rows of `table` by token id.
pub fn embedding(table: &Array, ids: &[u16]) -> Result<Array> {
    let (v, d) = (table.rows(), table.cols());
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if (id as usize) >= v {
            return Err(Error::invalid(format!(
                "embedding: token id {id} out of vocabulary {v}"
            )));
        }
        data.extend_from_slice(table.row(id as usize));
    }
    Ok(Array::from_parts(vec![ids.len(), d], data))
}

/// One element per row: out[i] = a[i][idx[i]].
pub fn select_per_row(a: &Array, idx: &[usize]) -> Result<Array> {
    let (m, n) = (a.rows(), a.cols());
    if idx.len() != m {
        return Err(Error::invalid(format!(
            "select_per_row: {} indices for {m} rows",
            idx.len()
        )));
    }
    let mut data = Vec::with_capacity(m);
    for (i, &j) in idx.iter().enumerate() {
        if j >= n {
            return Err(Error::invalid(format!(
                "select_per_row: column {j} out of {n}"
            )));
        }
        data.push(a.row(i)[j]);
    }
    Ok(Array::from_parts(vec![m], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr2(rows: &[&[f32]]) -> Array {
        Array::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = arr2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let a = arr2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let out = matmul(&eye, &a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = arr2(&[&[1.0, 2.0]]);
        let b = arr2(&[&[1.0, 2.0]]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[1, 2]"), "{err}");
    }

    #[test]
    fn softmax_symmetry() {
        let out = softmax_rows(&Array::new(vec![2], vec![0.0, 0.0]).unwrap());
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn log_softmax_matches_direct_evaluation() {
        // direct f64 oracle: x - ln(sum e^x)
        let x = [1.0f64, 2.0];
        let lse = (x[0].exp() + x[1].exp()).ln();
        let expect = [x[0] - lse, x[1] - lse];
        let out = log_softmax_rows(&Array::new(vec![2], vec![1.0, 2.0]).unwrap());
        for (o, e) in out.data().iter().zip(expect) {
            assert!((*o as f64 - e).abs() < 1e-6);
        }
        // frozen values
        assert!((out.data()[0] - -1.3133).abs() < 1e-4);
        assert!((out.data()[1] - -0.3133).abs() < 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let logits = Array::new(vec![3], vec![10.0, -3.0, 0.5]).unwrap();
        let shifted = add(&logits, &Array::filled(&[3], 100.0)).unwrap();
        let (p, q) = (softmax_rows(&logits), softmax_rows(&shifted));
        let sum: f32 = p.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        for (a, b) in p.data().iter().zip(q.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_rows_bounds_norm() {
        let a = arr2(&[&[3.0, 4.0], &[0.0, 0.0]]);
        let y = l2_normalize_rows(&a, 1e-6);
        let n0: f32 = y.row(0).iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!(n0 <= 1.0000001 && n0 > 0.9999);
        assert_eq!(y.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn slicing_and_concat_roundtrip() {
        let a = arr2(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let top = slice_rows(&a, 0, 1).unwrap();
        let rest = slice_rows(&a, 1, 2).unwrap();
        let back = concat_rows(&[&top, &rest]).unwrap();
        assert_eq!(back.data(), a.data());
    }

    #[test]
    fn embedding_rejects_out_of_vocab() {
        let table = arr2(&[&[1.0], &[2.0]]);
        assert!(embedding(&table, &[2]).is_err());
        let e = embedding(&table, &[1, 0]).unwrap();
        assert_eq!(e.data(), &[2.0, 1.0]);
    }
}
