//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Graph`] appends one node holding its forward value
//! and the handles of its inputs. Nodes are only ever appended, so the node
//! order is already a topological order and [`Graph::backward`] is a single
//! reverse sweep.

use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    SoftmaxRows(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Relu(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    LayerNorm(Var, Vec<f64>),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single-use tape. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    params: Vec<(ParamId, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op_name(&op))));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that never receives gradient updates.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant)
    }

    /// Binds a trainable parameter. Repeated binds of the same id share one node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Result<Var> {
        if self.bound.len() <= id.index() {
            self.bound.resize(id.index() + 1, None);
        }
        if let Some(v) = self.bound[id.index()] {
            return Ok(v);
        }
        let v = self.push(params.get(id).clone(), Op::Param)?;
        self.bound[id.index()] = Some(v);
        self.params.push((id, v));
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.check_same_shape(y, "add")?;
        let mut out = x.clone();
        out.add_assign(y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.check_same_shape(y, "sub")?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        self.push(out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.check_same_shape(y, "mul")?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1 x n` row vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        check_row_broadcast(x, r, "add_row")?;
        let mut out = x.clone();
        let n = x.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += r.data()[i % n];
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of an `m x n` matrix by a `1 x n` row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        check_row_broadcast(x, r, "mul_row")?;
        let mut out = x.clone();
        let n = x.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= r.data()[i % n];
        }
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    /// `a @ b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let mut out = Tensor::zeros(x.rows(), y.rows());
        matmul_nt_into(x.data(), y.data(), out.data_mut(), x.rows(), x.cols(), y.rows());
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.value(*first).shape(),
                    right: t.shape(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.value(*first).shape(),
                    right: t.shape(),
                });
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: x.shape(),
                right: (start + len, x.cols()),
            });
        }
        let data = x.data()[start * x.cols()..(start + len) * x.cols()].to_vec();
        let out = Tensor::new(len, x.cols(), data)?;
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: x.shape(),
                right: (x.rows(), start + len),
            });
        }
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if x.len() != rows * cols {
            return Err(Error::Shape {
                op: "reshape",
                left: x.shape(),
                right: (rows, cols),
            });
        }
        let out = Tensor::new(rows, cols, x.data().to_vec())?;
        self.push(out, Op::Reshape(a))
    }

    /// Row lookup, as used by embedding tables.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(Error::Argument(format!(
                    "gather_rows index {id} out of range for {} rows",
                    t.rows()
                )));
            }
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(out, Op::GatherRows(table, ids.to_vec()))
    }

    pub fn gather_cols(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), ids.len());
        for (j, &id) in ids.iter().enumerate() {
            if id >= x.cols() {
                return Err(Error::Argument(format!(
                    "gather_cols index {id} out of range for {} cols",
                    x.cols()
                )));
            }
            for r in 0..x.rows() {
                out.set(r, j, x.get(r, id));
            }
        }
        self.push(out, Op::GatherCols(a, ids.to_vec()))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// `ln σ(x)`, evaluated without forming `σ(x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(log_sigmoid);
        self.push(out, Op::LogSigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a))
    }

    /// Clips into `[lo, hi]`; gradient is zero where clipping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Per-row normalization to zero mean and unit variance, without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut out = x.clone();
        let mut inv_stds = Vec::with_capacity(x.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
            inv_stds.push(inv_std);
        }
        self.push(out, Op::LayerNorm(a, inv_stds))
    }

    /// Multiplies by a fixed mask (already scaled for inverted dropout).
    pub fn apply_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                actual: mask.len(),
            });
        }
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        self.push(out, Op::Dropout(a, mask))
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and scales
    /// the survivors by `1 / (1 - rate)`. A zero rate is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mask = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.apply_mask(a, mask)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Argument("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(x.sum() / x.len() as f64);
        self.push(out, Op::Mean(a))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, zip_with(&g, y, |p, q| p * q));
                    accumulate(&mut grads, *b, zip_with(&g, x, |p, q| p * q));
                }
                Op::AddRow(a, r) => {
                    let n = g.cols();
                    let mut gr = Tensor::zeros(1, n);
                    for (i, v) in g.data().iter().enumerate() {
                        gr.data_mut()[i % n] += v;
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *r, gr);
                }
                Op::MulRow(a, r) => {
                    let (x, row) = (self.value(*a), self.value(*r));
                    let n = g.cols();
                    let mut gx = g.clone();
                    let mut gr = Tensor::zeros(1, n);
                    for (i, v) in gx.data_mut().iter_mut().enumerate() {
                        gr.data_mut()[i % n] += *v * x.data()[i];
                        *v *= row.data()[i % n];
                    }
                    accumulate(&mut grads, *a, gx);
                    accumulate(&mut grads, *r, gr);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|v| v * c));
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (x.rows(), x.cols(), y.cols());
                    let mut ga = Tensor::zeros(m, k);
                    matmul_nt_into(g.data(), y.data(), ga.data_mut(), m, n, k);
                    let mut gb = Tensor::zeros(k, n);
                    matmul_tn_into(x.data(), g.data(), gb.data_mut(), m, k, n);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (x.rows(), x.cols(), y.rows());
                    let mut ga = Tensor::zeros(m, k);
                    matmul_into(g.data(), y.data(), ga.data_mut(), m, n, k);
                    let mut gb = Tensor::zeros(n, k);
                    matmul_tn_into(g.data(), x.data(), gb.data_mut(), m, n, k);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(&mut grads, p, Tensor::new(rows, cols, data)?);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = self.value(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), width);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + width]);
                        }
                        accumulate(&mut grads, p, gp);
                        offset += width;
                    }
                }
                Op::SliceRows(a, start) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    let c = x.cols();
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Tensor::new(r, c, g.data().to_vec())?);
                }
                Op::GatherRows(table, ids) => {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.rows(), t.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        for (dst, src) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *dst += src;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::GatherCols(a, ids) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for (j, &id) in ids.iter().enumerate() {
                        for r in 0..x.rows() {
                            let cur = ga.get(r, id);
                            ga.set(r, id, cur + g.get(r, j));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_with(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSigmoid(a) => {
                    let ga = zip_with(&g, self.value(*a), |gv, x| gv * sigmoid(-x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip_with(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Ln(a) => {
                    let ga = zip_with(&g, self.value(*a), |gv, x| gv / x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = zip_with(
                        &g,
                        self.value(*a),
                        |gv, x| {
                            if x > lo && x < hi {
                                gv
                            } else {
                                0.0
                            }
                        },
                    );
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, inv_stds) => {
                    let y = &node.value;
                    let n = y.cols() as f64;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n;
                        for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = inv_stds[r] * (gv - g_mean - yv * gy_mean);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Dropout(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(p, q)| p * q).collect();
                    accumulate(&mut grads, *a, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Tensor::filled(r, c, g.data()[0]));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let share = g.data()[0] / (r * c) as f64;
                    accumulate(&mut grads, *a, Tensor::filled(r, c, share));
                }
            }
            // Leaves keep their gradient for lookup.
            if matches!(node.op, Op::Constant | Op::Param) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

/// Gradients of one backward sweep, retained for leaf nodes.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// One gradient per parameter in `params`; parameters that were never bound
    /// or are unreachable from the loss get zeros.
    pub fn for_params(&self, params: &ParamSet) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        for &(id, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                out[id.index()] = g.clone();
            }
        }
        out
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x) = −ln(1 + e^(−x))`, stable for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

fn check_row_broadcast(x: &Tensor, r: &Tensor, op: &'static str) -> Result<()> {
    if r.rows() != 1 || r.cols() != x.cols() {
        return Err(Error::Shape {
            op,
            left: x.shape(),
            right: r.shape(),
        });
    }
    Ok(())
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param => "param",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::MulRow(..) => "mul_row",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::ConcatRows(..) => "concat_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::Reshape(..) => "reshape",
        Op::GatherRows(..) => "gather_rows",
        Op::GatherCols(..) => "gather_cols",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::Sigmoid(..) => "sigmoid",
        Op::LogSigmoid(..) => "log_sigmoid",
        Op::Relu(..) => "relu",
        Op::Ln(..) => "ln",
        Op::Clamp(..) => "clamp",
        Op::LayerNorm(..) => "layer_norm",
        Op::Dropout(..) => "dropout",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(t(1, 2, &[0.0, 0.0])).unwrap();
        let s = g.softmax_rows(x).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(t(1, 4, &[3.0; 4])).unwrap();
        let y = g.layer_norm(x, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.constant(t(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn log_sigmoid_matches_naive_and_stays_finite() {
        for x in [-30.0, -2.0, 0.0, 0.5, 4.0] {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        assert_eq!(log_sigmoid(800.0), 0.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1.5)).unwrap();
        let y = g.log_sigmoid(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!((grads.wrt(x).unwrap().data()[0] - sigmoid(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0)).unwrap();
        let y = g.sigmoid(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.constant(t(1, 2, &[1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3)).unwrap();
        let b = g.constant(Tensor::zeros(3, 2)).unwrap();
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(3, 2)"), "{msg}");
    }

    #[test]
    fn unreachable_leaf_gets_zero_param_gradient() {
        let mut params = ParamSet::new();
        let used = params.insert("used", Tensor::scalar(2.0));
        let unused = params.insert("unused", Tensor::scalar(5.0));
        let mut g = Graph::new();
        let u = g.param(&params, used).unwrap();
        let _ = g.param(&params, unused).unwrap();
        let y = g.mul(u, u).unwrap();
        let grads = g.backward(y).unwrap().for_params(&params);
        assert_eq!(grads[0].data(), &[4.0]);
        assert_eq!(grads[1].data(), &[0.0]);
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = g.constant(t(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = g.constant(Tensor::filled(1, 20_000, 1.0)).unwrap();
        let y = g.dropout(x, 0.1, &mut rng).unwrap();
        let mean = g.value(y).sum() / 20_000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(g.ln(x), Err(Error::NonFinite(_))));
    }
}
