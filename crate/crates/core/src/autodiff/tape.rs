//! Dynamic tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the inputs it
//! was computed from, so node order is a topological order. Parameters are
//! borrowed rather than copied; [`Tape::backward`] sweeps the nodes in reverse
//! and returns gradients for every node that requires one.

use std::borrow::Cow;

use super::tensor::{matmul_raw, transpose_raw, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to predictions before taking logarithms in [`Tape::bce`].
pub const BCE_EPSILON: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Gather { table: Var, indices: Vec<usize> },
    SumCols(Var),
    MeanCols(Var),
    MaxPoolCols { input: Var, argmax: Vec<usize> },
    Softmax(Var),
    BroadcastRows(Var),
    Reshape(Var),
    Bce { yhat: Var, target: Vec<f64> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Takes ownership of a gradient, leaving `None` behind.
    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, &a.shape, &b.shape));
    }
    Ok(())
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(op, &t.shape, &[0, 0]));
    }
    Ok((t.shape[0], t.shape[1]))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input owned by the tape.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input borrowed from a parameter store.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_matrix("matmul", ta)?;
        let (k2, n) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(Error::shape("matmul", &ta.shape, &tb.shape));
        }
        let data = matmul_raw(&ta.data, &tb.data, m, k, n);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = require_matrix("transpose", t)?;
        let data = transpose_raw(&t.data, m, n);
        Ok(self.push(Tensor { shape: vec![n, m], data }, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (_, n) = require_matrix("add_row", ta)?;
        if tr.shape != [n] {
            return Err(Error::shape("add_row", &ta.shape, &tr.shape));
        }
        let data = ta
            .data
            .chunks(n)
            .flat_map(|r| r.iter().zip(&tr.data).map(|(x, y)| x + y))
            .collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let data = t.data.iter().map(|x| x * c).collect();
        let shape = t.shape.clone();
        self.push(Tensor { shape, data }, Op::Scale(a, c), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data.iter().map(|&x| sigmoid(x)).collect();
        let shape = t.shape.clone();
        self.push(Tensor { shape, data }, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data.iter().map(|x| x.tanh()).collect();
        let shape = t.shape.clone();
        self.push(Tensor { shape, data }, Op::Tanh(a), &[a])
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns) or vectors
    /// along axis 0.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        let rank = self.value(*first).rank();
        if !(rank == 1 && axis == 0 || rank == 2 && axis < 2) {
            return Err(Error::Invalid(format!("concat axis {axis} on rank {rank}")));
        }
        let shape0 = self.value(*first).shape.clone();
        for v in inputs {
            let s = &self.value(*v).shape;
            let ok = s.len() == rank && (rank == 1 || s[1 - axis] == shape0[1 - axis]);
            if !ok {
                return Err(Error::shape("concat", &shape0, s));
            }
        }
        let (shape, data) = if rank == 1 || axis == 0 {
            let data: Vec<f64> = inputs
                .iter()
                .flat_map(|v| self.value(*v).data.iter().copied())
                .collect();
            let mut shape = shape0.clone();
            shape[0] = inputs.iter().map(|v| self.value(*v).shape[0]).sum();
            (shape, data)
        } else {
            let rows = shape0[0];
            let cols: usize = inputs.iter().map(|v| self.value(*v).shape[1]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for v in inputs {
                    data.extend_from_slice(self.value(*v).row(i));
                }
            }
            (vec![rows, cols], data)
        };
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let rank = t.rank();
        if !(rank == 1 && axis == 0 || rank == 2 && axis < 2) {
            return Err(Error::Invalid(format!("slice axis {axis} on rank {rank}")));
        }
        if start >= end || end > t.shape[axis] {
            return Err(Error::Index {
                what: "slice",
                index: end,
                size: t.shape[axis],
            });
        }
        let (shape, data) = if rank == 1 {
            (vec![end - start], t.data[start..end].to_vec())
        } else if axis == 0 {
            let c = t.shape[1];
            (vec![end - start, c], t.data[start * c..end * c].to_vec())
        } else {
            let data = t
                .data
                .chunks(t.shape[1])
                .flat_map(|r| r[start..end].iter().copied())
                .collect();
            (vec![t.shape[0], end - start], data)
        };
        Ok(self.push(Tensor { shape, data }, Op::Slice { input: a, axis, start }, &[a]))
    }

    /// Rows of `table` selected by `indices`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = require_matrix("gather", t)?;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index {
                    what: "gather",
                    index: i,
                    size: rows,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            Tensor {
                shape: vec![indices.len(), cols],
                data,
            },
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        ))
    }

    /// Row sums of an `m x n` matrix, giving a length-`m` vector.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, n) = require_matrix("sum_cols", t)?;
        let data = t.data.chunks(n).map(|r| r.iter().sum()).collect();
        Ok(self.push(Tensor::vector(data), Op::SumCols(a), &[a]))
    }

    /// Row means of an `m x n` matrix.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, n) = require_matrix("mean_cols", t)?;
        let data = t
            .data
            .chunks(n)
            .map(|r| r.iter().sum::<f64>() / n as f64)
            .collect();
        Ok(self.push(Tensor::vector(data), Op::MeanCols(a), &[a]))
    }

    /// Row maxima of an `m x n` matrix; ties resolve to the first column.
    pub fn maxpool_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, n) = require_matrix("maxpool_cols", t)?;
        let mut argmax = Vec::with_capacity(t.rows());
        let mut data = Vec::with_capacity(t.rows());
        for r in t.data.chunks(n) {
            let mut best = 0;
            for (j, &x) in r.iter().enumerate() {
                if x > r[best] {
                    best = j;
                }
            }
            argmax.push(best);
            data.push(r[best]);
        }
        Ok(self.push(Tensor::vector(data), Op::MaxPoolCols { input: a, argmax }, &[a]))
    }

    /// Softmax of a vector, or of every row of a matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let width = match t.rank() {
            1 => t.shape[0],
            2 => t.shape[1],
            _ => return Err(Error::shape("softmax", &t.shape, &[0])),
        };
        let mut data = t.data.clone();
        if width > 0 {
            data.chunks_mut(width).for_each(softmax_in_place);
        }
        let shape = t.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Softmax(a), &[a]))
    }

    /// Repeats a length-`n` vector as `rows` identical rows.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::shape("broadcast_rows", &t.shape, &[0]));
        }
        let n = t.shape[0];
        let data = t.data.repeat(rows);
        Ok(self.push(
            Tensor {
                shape: vec![rows, n],
                data,
            },
            Op::BroadcastRows(a),
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::shape("reshape", &t.shape, shape));
        }
        let value = Tensor::new(shape.to_vec(), t.data.clone())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Summed binary cross-entropy over labels; `yhat` is clamped to
    /// `[eps, 1 - eps]` first.
    pub fn bce(&mut self, yhat: Var, target: &[f64]) -> Result<Var> {
        let t = self.value(yhat);
        if t.rank() != 1 || t.shape[0] != target.len() {
            return Err(Error::shape("bce", &t.shape, &[target.len()]));
        }
        let loss = t
            .data
            .iter()
            .zip(target)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
                -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
            })
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                yhat,
                target: target.to_vec(),
            },
            &[yhat],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::shape("backward", &lv.shape, &[]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if self.nodes[a.0].requires_grad {
                    let bt = transpose_raw(&tb.data, k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    self.accumulate(grads, *a, |s| add_into(s, &da));
                }
                if self.nodes[b.0].requires_grad {
                    let at = transpose_raw(&ta.data, m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    self.accumulate(grads, *b, |s| add_into(s, &db));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (out.shape[0], out.shape[1]);
                let ga = transpose_raw(g, m, n);
                self.accumulate(grads, *a, |s| add_into(s, &ga));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| add_into(s, g));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                let n = out.shape[1];
                self.accumulate(grads, *row, |s| {
                    for r in g.chunks(n) {
                        add_into(s, r);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                self.accumulate(grads, *a, |s| {
                    for ((s, g), y) in s.iter_mut().zip(g).zip(vb) {
                        *s += g * y;
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(va) {
                        *s += g * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |s| {
                    for (s, g) in s.iter_mut().zip(g) {
                        *s += g * c;
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, |s| {
                    for ((s, g), y) in s.iter_mut().zip(g).zip(&out.data) {
                        *s += g * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, |s| {
                    for ((s, g), y) in s.iter_mut().zip(g).zip(&out.data) {
                        *s += g * (1.0 - y * y);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                if out.rank() == 1 || *axis == 0 {
                    let mut offset = 0;
                    for v in inputs {
                        let len = self.value(*v).numel();
                        self.accumulate(grads, *v, |s| add_into(s, &g[offset..offset + len]));
                        offset += len;
                    }
                } else {
                    let total = out.shape[1];
                    let mut offset = 0;
                    for v in inputs {
                        let c = self.value(*v).shape[1];
                        self.accumulate(grads, *v, |s| {
                            for (sr, gr) in s.chunks_mut(c).zip(g.chunks(total)) {
                                add_into(sr, &gr[offset..offset + c]);
                            }
                        });
                        offset += c;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let src = self.value(*input);
                if src.rank() == 1 {
                    self.accumulate(grads, *input, |s| {
                        add_into(&mut s[*start..*start + g.len()], g)
                    });
                } else if *axis == 0 {
                    let c = src.shape[1];
                    self.accumulate(grads, *input, |s| {
                        add_into(&mut s[start * c..start * c + g.len()], g)
                    });
                } else {
                    let (c, w) = (src.shape[1], out.shape[1]);
                    self.accumulate(grads, *input, |s| {
                        for (sr, gr) in s.chunks_mut(c).zip(g.chunks(w)) {
                            add_into(&mut sr[*start..*start + w], gr);
                        }
                    });
                }
            }
            Op::Gather { table, indices } => {
                let c = out.shape[1];
                self.accumulate(grads, *table, |s| {
                    for (&i, gr) in indices.iter().zip(g.chunks(c)) {
                        add_into(&mut s[i * c..(i + 1) * c], gr);
                    }
                });
            }
            Op::SumCols(a) => {
                let n = self.value(*a).shape[1];
                self.accumulate(grads, *a, |s| {
                    for (sr, &gi) in s.chunks_mut(n).zip(g) {
                        sr.iter_mut().for_each(|x| *x += gi);
                    }
                });
            }
            Op::MeanCols(a) => {
                let n = self.value(*a).shape[1];
                self.accumulate(grads, *a, |s| {
                    for (sr, &gi) in s.chunks_mut(n).zip(g) {
                        sr.iter_mut().for_each(|x| *x += gi / n as f64);
                    }
                });
            }
            Op::MaxPoolCols { input, argmax } => {
                let n = self.value(*input).shape[1];
                self.accumulate(grads, *input, |s| {
                    for (i, (&j, &gi)) in argmax.iter().zip(g).enumerate() {
                        s[i * n + j] += gi;
                    }
                });
            }
            Op::Softmax(a) => {
                let width = *out.shape.last().unwrap_or(&1);
                self.accumulate(grads, *a, |s| {
                    for ((sr, gr), yr) in s
                        .chunks_mut(width)
                        .zip(g.chunks(width))
                        .zip(out.data.chunks(width))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((s, g), y) in sr.iter_mut().zip(gr).zip(yr) {
                            *s += y * (g - dot);
                        }
                    }
                });
            }
            Op::BroadcastRows(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, |s| {
                    for gr in g.chunks(n) {
                        add_into(s, gr);
                    }
                });
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
            }
            Op::Bce { yhat, target } => {
                let p = &self.value(*yhat).data;
                self.accumulate(grads, *yhat, |s| {
                    for ((s, &p), &y) in s.iter_mut().zip(p).zip(target) {
                        if p > BCE_EPSILON && p < 1.0 - BCE_EPSILON {
                            *s += g[0] * (p - y) / (p * (1.0 - p));
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
