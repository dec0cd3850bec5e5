//! Reverse-mode differentiation via operation recording.
//!
//! A `Tape` owns every intermediate value of one forward computation. Ops
//! whose inputs are all constants skip recording, so a forward pass over
//! constant parameters doubles as no-grad inference. `backward` replays the
//! record in exact reverse order, which also makes gradients bitwise
//! reproducible.
//!
//! A tape is confined to one logical thread; batch parallelism uses one tape
//! per batch element.

use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::Array;

/// Handle to a value on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

struct Node {
    value: Array,
    requires_grad: bool,
    is_leaf: bool,
}

enum Op {
    Matmul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    MinElem { a: ValueId, b: ValueId },
    Scale { a: ValueId, c: f32 },
    Exp { a: ValueId },
    Clamp { a: ValueId, lo: f32, hi: f32 },
    Silu { a: ValueId },
    AddRow { a: ValueId, bias: ValueId },
    MulRow { a: ValueId, gain: ValueId },
    SoftmaxRows { a: ValueId },
    LogSoftmaxRows { a: ValueId },
    SumAll { a: ValueId },
    MeanAll { a: ValueId },
    L2Norm { a: ValueId },
    L2NormalizeRows { a: ValueId, eps: f32 },
    Transpose { a: ValueId },
    Reshape { a: ValueId },
    ConcatRows { parts: Vec<ValueId> },
    SliceRows { a: ValueId, start: usize, len: usize },
    Embedding { table: ValueId, ids: Vec<u16> },
    SelectPerRow { a: ValueId, idx: Vec<usize> },
}

struct Record {
    op: Op,
    out: ValueId,
}

/// Gradient map produced by [`Tape::backward`]. Tracked leaves always have an
/// entry (zeros when untouched by the loss); constants have none.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Array> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Array> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Insert a value that does not receive gradients.
    pub fn constant(&mut self, value: Array) -> ValueId {
        self.push(value, false, true)
    }

    /// Insert a tracked leaf (a parameter).
    pub fn tracked(&mut self, value: Array) -> ValueId {
        self.push(value, true, true)
    }

    pub fn value(&self, id: ValueId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn num_values(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Array, requires_grad: bool, is_leaf: bool) -> ValueId {
        self.nodes.push(Node {
            value,
            requires_grad,
            is_leaf,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn requires(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Push an op output; record it only when a gradient can flow to it.
    fn emit(&mut self, value: Array, inputs: &[ValueId], op: impl FnOnce() -> Op) -> ValueId {
        let rg = self.requires(inputs);
        let out = self.push(value, rg, false);
        if rg {
            self.records.push(Record { op: op(), out });
        }
        out
    }

    // ── primitive suite ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.emit(v, &[a, b], || Op::Matmul { a, b }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.emit(v, &[a, b], || Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = ops::sub(self.value(a), self.value(b))?;
        Ok(self.emit(v, &[a, b], || Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.emit(v, &[a, b], || Op::Mul { a, b }))
    }

    pub fn min_elem(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = ops::min_elem(self.value(a), self.value(b))?;
        Ok(self.emit(v, &[a, b], || Op::MinElem { a, b }))
    }

    pub fn scale(&mut self, a: ValueId, c: f32) -> ValueId {
        let v = ops::scale(self.value(a), c);
        self.emit(v, &[a], || Op::Scale { a, c })
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        let v = ops::exp(self.value(a));
        self.emit(v, &[a], || Op::Exp { a })
    }

    pub fn clamp(&mut self, a: ValueId, lo: f32, hi: f32) -> ValueId {
        let v = ops::clamp(self.value(a), lo, hi);
        self.emit(v, &[a], || Op::Clamp { a, lo, hi })
    }

    pub fn silu(&mut self, a: ValueId) -> ValueId {
        let v = ops::silu(self.value(a));
        self.emit(v, &[a], || Op::Silu { a })
    }

    pub fn add_row(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        let v = ops::add_row(self.value(a), self.value(bias))?;
        Ok(self.emit(v, &[a, bias], || Op::AddRow { a, bias }))
    }

    pub fn mul_row(&mut self, a: ValueId, gain: ValueId) -> Result<ValueId> {
        let v = ops::mul_row(self.value(a), self.value(gain))?;
        Ok(self.emit(v, &[a, gain], || Op::MulRow { a, gain }))
    }

    pub fn softmax_rows(&mut self, a: ValueId) -> ValueId {
        let v = ops::softmax_rows(self.value(a));
        self.emit(v, &[a], || Op::SoftmaxRows { a })
    }

    pub fn log_softmax_rows(&mut self, a: ValueId) -> ValueId {
        let v = ops::log_softmax_rows(self.value(a));
        self.emit(v, &[a], || Op::LogSoftmaxRows { a })
    }

    pub fn sum_all(&mut self, a: ValueId) -> ValueId {
        let v = ops::sum_all(self.value(a));
        self.emit(v, &[a], || Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: ValueId) -> ValueId {
        let v = ops::mean_all(self.value(a));
        self.emit(v, &[a], || Op::MeanAll { a })
    }

    pub fn l2_norm(&mut self, a: ValueId) -> ValueId {
        let v = ops::l2_norm(self.value(a));
        self.emit(v, &[a], || Op::L2Norm { a })
    }

    pub fn l2_normalize_rows(&mut self, a: ValueId, eps: f32) -> ValueId {
        let v = ops::l2_normalize_rows(self.value(a), eps);
        self.emit(v, &[a], || Op::L2NormalizeRows { a, eps })
    }

    pub fn transpose(&mut self, a: ValueId) -> ValueId {
        let v = ops::transpose(self.value(a));
        self.emit(v, &[a], || Op::Transpose { a })
    }

    pub fn reshape(&mut self, a: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let v = self.value(a).reshaped(shape)?;
        Ok(self.emit(v, &[a], || Op::Reshape { a }))
    }

    pub fn concat_rows(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let arrays: Vec<&Array> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_rows(&arrays)?;
        let parts = parts.to_vec();
        Ok(self.emit(v, &parts.clone(), || Op::ConcatRows { parts }))
    }

    pub fn slice_rows(&mut self, a: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let v = ops::slice_rows(self.value(a), start, len)?;
        Ok(self.emit(v, &[a], || Op::SliceRows { a, start, len }))
    }

    pub fn embedding(&mut self, table: ValueId, ids: &[u16]) -> Result<ValueId> {
        let v = ops::embedding(self.value(table), ids)?;
        let ids = ids.to_vec();
        Ok(self.emit(v, &[table], || Op::Embedding { table, ids }))
    }

    pub fn select_per_row(&mut self, a: ValueId, idx: &[usize]) -> Result<ValueId> {
        let v = ops::select_per_row(self.value(a), idx)?;
        let idx = idx.to_vec();
        Ok(self.emit(v, &[a], || Op::SelectPerRow { a, idx }))
    }

    // ── backward pass ────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns a gradient per tracked leaf
    /// (zeros when the loss does not touch it); constants get no entry.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = self.nodes.iter().map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for rec in self.records.iter().rev() {
            let out_grad = match &grads[rec.out.0] {
                Some(g) => Array::from_parts(self.nodes[rec.out.0].value.shape().to_vec(), g.clone()),
                None => continue,
            };
            self.vjp(&rec.op, rec.out, &out_grad, &mut grads)?;
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                if node.requires_grad && node.is_leaf {
                    Some(match grads[i].take() {
                        Some(g) => Array::from_parts(node.value.shape().to_vec(), g),
                        None => Array::zeros(node.value.shape()),
                    })
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], id: ValueId, contrib: &Array) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        debug_assert_eq!(contrib.numel(), self.nodes[id.0].value.numel());
        match &mut grads[id.0] {
            Some(g) => g
                .iter_mut()
                .zip(contrib.data())
                .for_each(|(x, &y)| *x += y),
            slot => *slot = Some(contrib.data().to_vec()),
        }
    }

    fn vjp(
        &self,
        op: &Op,
        out: ValueId,
        g: &Array,
        grads: &mut [Option<Vec<f32>>],
    ) -> Result<()> {
        match op {
            Op::Matmul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = ops::matmul(g, &ops::transpose(bv))?;
                self.accumulate(grads, *a, &da);
                let db = ops::matmul(&ops::transpose(av), g)?;
                self.accumulate(grads, *b, &db);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, &ops::scale(g, -1.0));
            }
            Op::Mul { a, b } => {
                self.accumulate(grads, *a, &ops::mul(g, self.value(*b))?);
                self.accumulate(grads, *b, &ops::mul(g, self.value(*a))?);
            }
            Op::MinElem { a, b } => {
                // ties route to the first argument, matching the forward pick
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let pick_a: Vec<f32> = av
                    .iter()
                    .zip(bv)
                    .zip(g.data())
                    .map(|((&x, &y), &gv)| if x <= y { gv } else { 0.0 })
                    .collect();
                let pick_b: Vec<f32> = av
                    .iter()
                    .zip(bv)
                    .zip(g.data())
                    .map(|((&x, &y), &gv)| if x <= y { 0.0 } else { gv })
                    .collect();
                let shape = g.shape().to_vec();
                self.accumulate(grads, *a, &Array::from_parts(shape.clone(), pick_a));
                self.accumulate(grads, *b, &Array::from_parts(shape, pick_b));
            }
            Op::Scale { a, c } => {
                self.accumulate(grads, *a, &ops::scale(g, *c));
            }
            Op::Exp { a } => {
                self.accumulate(grads, *a, &ops::mul(g, self.value(out))?);
            }
            Op::Clamp { a, lo, hi } => {
                let av = self.value(*a).data();
                let d: Vec<f32> = av
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| if x >= *lo && x <= *hi { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, &Array::from_parts(g.shape().to_vec(), d));
            }
            Op::Silu { a } => {
                let d: Vec<f32> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| {
                        let s = ops::sigmoid(x);
                        gv * (s + x * s * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, *a, &Array::from_parts(g.shape().to_vec(), d));
            }
            Op::AddRow { a, bias } => {
                self.accumulate(grads, *a, g);
                let (m, n) = (g.rows(), g.cols());
                let mut col = vec![0.0f64; n];
                for i in 0..m {
                    for (c, &gv) in col.iter_mut().zip(g.row(i)) {
                        *c += gv as f64;
                    }
                }
                let col: Vec<f32> = col.into_iter().map(|v| v as f32).collect();
                let shape = self.value(*bias).shape().to_vec();
                self.accumulate(grads, *bias, &Array::from_parts(shape, col));
            }
            Op::MulRow { a, gain } => {
                let (av, gainv) = (self.value(*a), self.value(*gain));
                let (m, n) = (g.rows(), g.cols());
                let gd = gainv.data();
                let mut da = Vec::with_capacity(m * n);
                let mut dgain = vec![0.0f64; n];
                for i in 0..m {
                    for (j, (&gv, &xv)) in g.row(i).iter().zip(av.row(i)).enumerate() {
                        da.push(gv * gd[j]);
                        dgain[j] += (gv as f64) * (xv as f64);
                    }
                }
                self.accumulate(grads, *a, &Array::from_parts(av.shape().to_vec(), da));
                let dgain: Vec<f32> = dgain.into_iter().map(|v| v as f32).collect();
                let shape = gainv.shape().to_vec();
                self.accumulate(grads, *gain, &Array::from_parts(shape, dgain));
            }
            Op::SoftmaxRows { a } => {
                // dx = y * (g - <g, y>) per row
                let y = self.value(out);
                let (m, n) = (y.rows(), y.cols());
                let mut d = Vec::with_capacity(m * n);
                for i in 0..m {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr
                        .iter()
                        .zip(gr)
                        .map(|(&yv, &gv)| (yv as f64) * (gv as f64))
                        .sum();
                    d.extend(
                        yr.iter()
                            .zip(gr)
                            .map(|(&yv, &gv)| ((yv as f64) * ((gv as f64) - dot)) as f32),
                    );
                }
                self.accumulate(grads, *a, &Array::from_parts(y.shape().to_vec(), d));
            }
            Op::LogSoftmaxRows { a } => {
                // dx = g - softmax(x) * sum(g) per row; softmax(x) = exp(out)
                let y = self.value(out);
                let (m, n) = (y.rows(), y.cols());
                let mut d = Vec::with_capacity(m * n);
                for i in 0..m {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let gsum: f64 = gr.iter().map(|&v| v as f64).sum();
                    d.extend(
                        yr.iter()
                            .zip(gr)
                            .map(|(&yv, &gv)| ((gv as f64) - (yv as f64).exp() * gsum) as f32),
                    );
                }
                self.accumulate(grads, *a, &Array::from_parts(y.shape().to_vec(), d));
            }
            Op::SumAll { a } => {
                let shape = self.value(*a).shape();
                self.accumulate(grads, *a, &Array::filled(shape, g.item()));
            }
            Op::MeanAll { a } => {
                let av = self.value(*a);
                let c = g.item() / av.numel() as f32;
                self.accumulate(grads, *a, &Array::filled(av.shape(), c));
            }
            Op::L2Norm { a } => {
                let av = self.value(*a);
                let norm = self.value(out).item();
                let d: Vec<f32> = if norm == 0.0 {
                    vec![0.0; av.numel()]
                } else {
                    av.data().iter().map(|&x| g.item() * x / norm).collect()
                };
                self.accumulate(grads, *a, &Array::from_parts(av.shape().to_vec(), d));
            }
            Op::L2NormalizeRows { a, eps } => {
                // y = x * r, r = (s + eps)^(-1/2) => dx = r*g - r^3 <g,x> x
                let av = self.value(*a);
                let (m, n) = (av.rows(), av.cols());
                let mut d = Vec::with_capacity(m * n);
                for i in 0..m {
                    let (xr, gr) = (av.row(i), g.row(i));
                    let s: f64 = xr.iter().map(|&x| (x as f64) * (x as f64)).sum();
                    let r = 1.0 / (s + *eps as f64).sqrt();
                    let dot: f64 = xr
                        .iter()
                        .zip(gr)
                        .map(|(&x, &gv)| (x as f64) * (gv as f64))
                        .sum();
                    d.extend(
                        xr.iter()
                            .zip(gr)
                            .map(|(&x, &gv)| (r * (gv as f64) - r * r * r * dot * (x as f64)) as f32),
                    );
                }
                self.accumulate(grads, *a, &Array::from_parts(av.shape().to_vec(), d));
            }
            Op::Transpose { a } => {
                self.accumulate(grads, *a, &ops::transpose(g));
            }
            Op::Reshape { a } => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, &g.reshaped(shape)?);
            }
            Op::ConcatRows { parts } => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let piece = ops::slice_rows(g, start, rows)?;
                    let piece = piece.reshaped(self.value(p).shape().to_vec())?;
                    self.accumulate(grads, p, &piece);
                    start += rows;
                }
            }
            Op::SliceRows { a, start, len } => {
                let av = self.value(*a);
                let (m, n) = (av.rows(), av.cols());
                let mut d = vec![0.0f32; m * n];
                d[start * n..(start + len) * n].copy_from_slice(g.data());
                self.accumulate(grads, *a, &Array::from_parts(av.shape().to_vec(), d));
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let (v, dcols) = (tv.rows(), tv.cols());
                let mut d = vec![0.0f32; v * dcols];
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut d[(id as usize) * dcols..(id as usize + 1) * dcols];
                    for (x, &gv) in dst.iter_mut().zip(g.row(i)) {
                        *x += gv;
                    }
                }
                self.accumulate(grads, *table, &Array::from_parts(tv.shape().to_vec(), d));
            }
            Op::SelectPerRow { a, idx } => {
                let av = self.value(*a);
                let (m, n) = (av.rows(), av.cols());
                let mut d = vec![0.0f32; m * n];
                for (i, &j) in idx.iter().enumerate() {
                    d[i * n + j] += g.data()[i];
                }
                self.accumulate(grads, *a, &Array::from_parts(av.shape().to_vec(), d));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let p = tape.tracked(Array::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_half_squared_norm_is_p() {
        let mut tape = Tape::new();
        let v = Array::new(vec![4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let p = tape.tracked(v.clone());
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum_all(sq);
        let loss = tape.scale(s, 0.5);
        let grads = tape.backward(loss).unwrap();
        for (g, x) in grads.get(p).unwrap().data().iter().zip(v.data()) {
            assert!((g - x).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_onehot() {
        let logits = Array::new(vec![1, 3], vec![0.2, -0.7, 1.1]).unwrap();
        let mut tape = Tape::new();
        let p = tape.tracked(logits.clone());
        let ls = tape.log_softmax_rows(p);
        let picked = tape.select_per_row(ls, &[1]).unwrap();
        let s = tape.sum_all(picked);
        let loss = tape.scale(s, -1.0);
        let grads = tape.backward(loss).unwrap();
        let sm = ops::softmax_rows(&logits);
        let onehot = [0.0, 1.0, 0.0];
        for ((g, p), h) in grads
            .get(p)
            .unwrap()
            .data()
            .iter()
            .zip(sm.data())
            .zip(onehot)
        {
            assert!((g - (p - h)).abs() < 1e-5, "{g} vs {}", p - h);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.tracked(Array::zeros(&[2]));
        let y = tape.scale(p, 2.0);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn constants_get_no_gradient_and_untouched_params_get_zeros() {
        let mut tape = Tape::new();
        let c = tape.constant(Array::filled(&[2], 3.0));
        let p = tape.tracked(Array::filled(&[2], 1.0));
        let q = tape.tracked(Array::filled(&[2], 1.0)); // untouched by the loss
        let y = tape.mul(p, c).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[3.0, 3.0]);
        assert_eq!(grads.get(q).unwrap().data(), &[0.0, 0.0]);
        let _ = q;
    }

    #[test]
    fn backward_twice_is_bitwise_identical() {
        let mut tape = Tape::new();
        let p = tape.tracked(Array::new(vec![2, 2], vec![0.1, -0.4, 0.9, 0.3]).unwrap());
        let t = tape.transpose(p);
        let m = tape.matmul(p, t).unwrap();
        let sm = tape.softmax_rows(m);
        let loss = tape.mean_all(sm);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert!(g1.get(p).unwrap().bits_eq(g2.get(p).unwrap()));
    }

    #[test]
    fn ops_on_constants_record_nothing() {
        let mut tape = Tape::new();
        let a = tape.constant(Array::filled(&[4], 1.0));
        let b = tape.constant(Array::filled(&[4], 2.0));
        let c = tape.add(a, b).unwrap();
        let _ = tape.sum_all(c);
        assert!(tape.records.is_empty());
    }
}
