//! Reverse-mode differentiation over a linear tape of array operations.
//!
//! A [`Tape`] borrows a [`ParamSet`] for the duration of one forward/backward
//! pass. Parameter nodes read their value straight from the set, every other
//! node owns its value. Nodes are appended in evaluation order, so walking
//! the tape backwards is a valid reverse topological order.

use std::collections::BTreeMap;

use super::array::{matmul_nt_into, matmul_tn_into, sigmoid};
use super::{Array, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Operation with a hand-written vector-Jacobian product.
///
/// Used for fused kernels (LSTM sweeps, CRF recursions) that would otherwise
/// expand into thousands of tiny nodes.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, `None` where the input is not
    /// differentiable.
    fn backward(&self, inputs: &[&Array], output: &Array, grad: &Array) -> Vec<Option<Array>>;
}

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Transpose(Var),
    Concat { axis: usize, parts: Vec<Var> },
    Slice { x: Var, axis: usize, start: usize },
    Dropout(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    RepeatCols(Var, usize),
    GroupSumCols(Var, usize),
    SquashRows(Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::SoftmaxRows(_) => "softmax",
            Op::LogSoftmaxRows(_) => "log_softmax",
            Op::LogSumExpRows(_) => "log_sum_exp",
            Op::Sum(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::Transpose(_) => "transpose",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Dropout(..) => "dropout",
            Op::Gather(..) => "gather",
            Op::Reshape(_) => "reshape",
            Op::RepeatCols(..) => "repeat_cols",
            Op::GroupSumCols(..) => "group_sum_cols",
            Op::SquashRows(_) => "squash",
            Op::Custom(op, _) => op.name(),
        }
    }
}

struct Node {
    value: Option<Array>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to the trainable parameters.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Array>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, g: Array) {
        self.grads.insert(id, g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Array)> {
        self.grads.iter_mut().map(|(k, v)| (*k, v))
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.values().map(Array::sq_norm).sum::<f64>().sqrt()
    }
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

fn bcast(op: &'static str, a: &Array, b: &Array) -> Result<Bcast> {
    let (m, n) = (a.rows(), a.cols());
    let (p, q) = (b.rows(), b.cols());
    if a.len() == b.len() && m == p && n == q {
        Ok(Bcast::Same)
    } else if p == 1 && q == 1 {
        Ok(Bcast::Scalar)
    } else if p == 1 && q == n {
        Ok(Bcast::Row)
    } else if p == m && q == 1 {
        Ok(Bcast::Col)
    } else {
        Err(Error::shape(
            op,
            format!("{:?} with {:?}", a.shape(), b.shape()),
        ))
    }
}

#[inline]
fn bidx(kind: Bcast, i: usize, n: usize) -> usize {
    match kind {
        Bcast::Same => i,
        Bcast::Row => i % n,
        Bcast::Col => i / n,
        Bcast::Scalar => 0,
    }
}

fn zip_bcast(a: &Array, b: &Array, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Array {
    let n = a.cols();
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[bidx(kind, i, n)]))
        .collect();
    Array::from_parts(a.shape().to_vec(), data)
}

/// Reduces a full-shape gradient onto a broadcast operand of shape `like`.
fn reduce_bcast(g: &[f64], cols: usize, kind: Bcast, like: &Array) -> Array {
    match kind {
        Bcast::Same => Array::from_parts(like.shape().to_vec(), g.to_vec()),
        _ => {
            let mut out = Array::zeros(like.shape());
            let od = out.data_mut();
            for (i, &v) in g.iter().enumerate() {
                od[bidx(kind, i, cols)] += v;
            }
            out
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(a), _) => a,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let trainable = self.params.get(id).trainable;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a + b`, with `b` broadcast over rows, columns, or as a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = bcast("add", self.value(a), self.value(b))?;
        let out = zip_bcast(self.value(a), self.value(b), kind, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b, kind), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = bcast("sub", self.value(a), self.value(b))?;
        let out = zip_bcast(self.value(a), self.value(b), kind, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b, kind), ng))
    }

    /// Element-wise product, with `b` broadcast like in [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = bcast("mul", self.value(a), self.value(b))?;
        let out = zip_bcast(self.value(a), self.value(b), kind, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b, kind), ng))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        let ng = self.ng(a);
        self.push(out, Op::Affine(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let ng = self.ng(a);
        self.push(out, Op::Log(a), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            data.extend(super::array::softmax(x.row_slice(r)));
        }
        let out = Array::from_parts(x.shape().to_vec(), data);
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = x.row_slice(r);
            let lse = super::array::log_sum_exp(row);
            data.extend(row.iter().map(|v| v - lse));
        }
        let out = Array::from_parts(x.shape().to_vec(), data);
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmaxRows(a), ng)
    }

    /// Log-sum-exp over the last axis; `m × n -> m × 1`.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows())
            .map(|r| super::array::log_sum_exp(x.row_slice(r)))
            .collect::<Vec<_>>();
        let out = Array::from_parts(vec![data.len(), 1], data);
        let ng = self.ng(a);
        self.push(out, Op::LogSumExpRows(a), ng)
    }

    /// Sum of all entries as a `1 × 1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    /// Sum along an axis of a matrix view: axis 1 gives `m × 1`, axis 0 gives `1 × n`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        let ng = self.ng(a);
        match axis {
            1 => {
                let data = (0..m).map(|r| x.row_slice(r).iter().sum()).collect();
                Ok(self.push(Array::from_parts(vec![m, 1], data), Op::SumRows(a), ng))
            }
            0 => {
                let mut data = vec![0.0; n];
                for r in 0..m {
                    for (d, v) in data.iter_mut().zip(x.row_slice(r)) {
                        *d += v;
                    }
                }
                Ok(self.push(Array::from_parts(vec![1, n], data), Op::SumCols(a), ng))
            }
            _ => Err(Error::shape("sum_axis", format!("axis {axis} on a matrix"))),
        }
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transposed();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Concatenates matrices along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let shapes: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| (self.value(p).rows(), self.value(p).cols()))
            .collect();
        let out = match axis {
            0 => {
                let n = shapes[0].1;
                if shapes.iter().any(|s| s.1 != n) {
                    return Err(Error::shape("concat", format!("row concat of {shapes:?}")));
                }
                let m: usize = shapes.iter().map(|s| s.0).sum();
                let mut data = Vec::with_capacity(m * n);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Array::from_parts(vec![m, n], data)
            }
            1 => {
                let m = shapes[0].0;
                if shapes.iter().any(|s| s.0 != m) {
                    return Err(Error::shape("concat", format!("column concat of {shapes:?}")));
                }
                let n: usize = shapes.iter().map(|s| s.1).sum();
                let mut data = Vec::with_capacity(m * n);
                for r in 0..m {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Array::from_parts(vec![m, n], data)
            }
            _ => return Err(Error::shape("concat", format!("axis {axis}"))),
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            out,
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    /// Rows (axis 0) or columns (axis 1) `start..end` of a matrix.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        let out = match axis {
            0 if start < end && end <= m => Array::from_parts(
                vec![end - start, n],
                x.data()[start * n..end * n].to_vec(),
            ),
            1 if start < end && end <= n => {
                let mut data = Vec::with_capacity(m * (end - start));
                for r in 0..m {
                    data.extend_from_slice(&x.row_slice(r)[start..end]);
                }
                Array::from_parts(vec![m, end - start], data)
            }
            _ => {
                return Err(Error::shape(
                    "slice",
                    format!("{start}..{end} on axis {axis} of {:?}", x.shape()),
                ))
            }
        };
        let ng = self.ng(a);
        Ok(self.push(out, Op::Slice { x: a, axis, start }, ng))
    }

    /// Multiplies by a fixed mask. Callers pass an inverted-dropout mask
    /// (entries `0` or `1 / (1 - rate)`).
    pub fn dropout(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(Error::shape(
                "dropout",
                format!("mask of {} for {:?}", mask.len(), x.shape()),
            ));
        }
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Array::from_parts(x.shape().to_vec(), data);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Dropout(a, mask), ng))
    }

    /// Row lookup: `table[ids[i]]` for each `i`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (m, n) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= m {
                return Err(Error::shape(
                    "gather",
                    format!("row {id} out of range for table {:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let out = Array::from_parts(vec![ids.len(), n], data);
        let ng = self.ng(table);
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Repeats each column `k` times: `m × n -> m × (n·k)`.
    pub fn repeat_cols(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        let mut data = Vec::with_capacity(m * n * k);
        for &v in x.data() {
            data.extend(std::iter::repeat(v).take(k));
        }
        let out = Array::from_parts(vec![m, n * k], data);
        let ng = self.ng(a);
        self.push(out, Op::RepeatCols(a, k), ng)
    }

    /// Sums consecutive groups of `k` columns: `m × (n·k) -> m × n`.
    pub fn group_sum_cols(&mut self, a: Var, k: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, nk) = (x.rows(), x.cols());
        if k == 0 || nk % k != 0 {
            return Err(Error::shape(
                "group_sum_cols",
                format!("{:?} into groups of {k}", x.shape()),
            ));
        }
        let data = x.data().chunks(k).map(|c| c.iter().sum()).collect();
        let out = Array::from_parts(vec![m, nk / k], data);
        let ng = self.ng(a);
        Ok(self.push(out, Op::GroupSumCols(a, k), ng))
    }

    /// Capsule squash applied to each row: `s · ‖s‖ / (1 + ‖s‖²)`.
    pub fn squash(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols();
        let mut data = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let g = norm / (1.0 + norm * norm);
            data.extend(row.iter().map(|v| v * g));
        }
        debug_assert_eq!(data.len(), x.rows() * n);
        let out = Array::from_parts(x.shape().to_vec(), data);
        let ng = self.ng(a);
        self.push(out, Op::SquashRows(a), ng)
    }

    /// Appends a node computed by a fused kernel.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Array) -> Var {
        let ng = inputs.iter().any(|&v| self.ng(v));
        self.push(output, Op::Custom(op, inputs.to_vec()), ng)
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Every trainable parameter of the borrowed set gets an entry; those the
    /// loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", lv.shape()),
            ));
        }
        if !lv.item().is_finite() {
            return Err(Error::Numeric(format!("loss is {}", lv.item())));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(lv.shape(), 1.0));
        let mut out = Gradients::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let contributions = self.node_backward(idx, &g)?;
            for (var, cg) in contributions {
                if !cg.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient produced by `{}`",
                        node.op.name()
                    )));
                }
                if !self.nodes[var.0].needs_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&cg),
                    slot @ None => *slot = Some(cg),
                }
            }
            if let Op::Param(id) = node.op {
                match out.grads.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.grads.insert(id, g);
                    }
                }
            }
        }
        for (id, p) in self.params.iter() {
            if p.trainable && !out.grads.contains_key(&id) {
                out.grads.insert(id, Array::zeros(p.value.shape()));
            }
        }
        Ok(out)
    }

    fn node_backward(&self, idx: usize, g: &Array) -> Result<Vec<(Var, Array)>> {
        let node = &self.nodes[idx];
        let y = node.value.as_ref();
        let gd = g.data();
        let unary = |a: Var, f: &dyn Fn(usize, f64) -> f64| {
            let x = self.value(a);
            let data = gd.iter().enumerate().map(|(i, &gv)| f(i, gv)).collect();
            vec![(a, Array::from_parts(x.shape().to_vec(), data))]
        };
        Ok(match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut res = Vec::with_capacity(2);
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_into(gd, bv.data(), &mut da, m, n, k);
                    res.push((*a, Array::from_parts(av.shape().to_vec(), da)));
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_into(av.data(), gd, &mut db, m, k, n);
                    res.push((*b, Array::from_parts(bv.shape().to_vec(), db)));
                }
                res
            }
            Op::Add(a, b, kind) => {
                let n = g.cols();
                vec![
                    (*a, g.clone()),
                    (*b, reduce_bcast(gd, n, *kind, self.value(*b))),
                ]
            }
            Op::Sub(a, b, kind) => {
                let n = g.cols();
                let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                vec![
                    (*a, g.clone()),
                    (*b, reduce_bcast(&neg, n, *kind, self.value(*b))),
                ]
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = g.cols();
                let bd = bv.data();
                let ad = av.data();
                let da = gd
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| gv * bd[bidx(*kind, i, n)])
                    .collect();
                let gb: Vec<f64> = gd.iter().zip(ad).map(|(gv, x)| gv * x).collect();
                vec![
                    (*a, Array::from_parts(av.shape().to_vec(), da)),
                    (*b, reduce_bcast(&gb, n, *kind, bv)),
                ]
            }
            Op::Affine(a, s) => unary(*a, &|_, gv| gv * s),
            Op::Sigmoid(a) => {
                let yd = y.unwrap().data();
                unary(*a, &|i, gv| gv * yd[i] * (1.0 - yd[i]))
            }
            Op::Tanh(a) => {
                let yd = y.unwrap().data();
                unary(*a, &|i, gv| gv * (1.0 - yd[i] * yd[i]))
            }
            Op::Exp(a) => {
                let yd = y.unwrap().data();
                unary(*a, &|i, gv| gv * yd[i])
            }
            Op::Log(a) => {
                let xd = self.value(*a).data();
                unary(*a, &|i, gv| gv / xd[i])
            }
            Op::SoftmaxRows(a) => {
                let yv = y.unwrap();
                let n = yv.cols();
                let mut dx = vec![0.0; yv.len()];
                for r in 0..yv.rows() {
                    let ys = yv.row_slice(r);
                    let gs = &gd[r * n..(r + 1) * n];
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        dx[r * n + c] = ys[c] * (gs[c] - dot);
                    }
                }
                vec![(*a, Array::from_parts(yv.shape().to_vec(), dx))]
            }
            Op::LogSoftmaxRows(a) => {
                let yv = y.unwrap();
                let n = yv.cols();
                let mut dx = vec![0.0; yv.len()];
                for r in 0..yv.rows() {
                    let ys = yv.row_slice(r);
                    let gs = &gd[r * n..(r + 1) * n];
                    let gsum: f64 = gs.iter().sum();
                    for c in 0..n {
                        dx[r * n + c] = gs[c] - ys[c].exp() * gsum;
                    }
                }
                vec![(*a, Array::from_parts(yv.shape().to_vec(), dx))]
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                let yd = y.unwrap().data();
                let n = x.cols();
                let dx = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let r = i / n;
                        if yd[r] == f64::NEG_INFINITY {
                            0.0
                        } else {
                            gd[r] * (v - yd[r]).exp()
                        }
                    })
                    .collect();
                vec![(*a, Array::from_parts(x.shape().to_vec(), dx))]
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                vec![(*a, Array::full(x.shape(), gd[0]))]
            }
            Op::SumRows(a) => {
                let x = self.value(*a);
                let n = x.cols();
                let dx = (0..x.len()).map(|i| gd[i / n]).collect();
                vec![(*a, Array::from_parts(x.shape().to_vec(), dx))]
            }
            Op::SumCols(a) => {
                let x = self.value(*a);
                let n = x.cols();
                let dx = (0..x.len()).map(|i| gd[i % n]).collect();
                vec![(*a, Array::from_parts(x.shape().to_vec(), dx))]
            }
            Op::Transpose(a) => vec![(*a, g.transposed().reshaped(self.value(*a).shape().to_vec())?)],
            Op::Concat { axis, parts } => {
                let mut res = Vec::with_capacity(parts.len());
                match axis {
                    0 => {
                        let mut off = 0;
                        for &p in parts {
                            let len = self.value(p).len();
                            res.push((
                                p,
                                Array::from_parts(
                                    self.value(p).shape().to_vec(),
                                    gd[off..off + len].to_vec(),
                                ),
                            ));
                            off += len;
                        }
                    }
                    _ => {
                        let n = g.cols();
                        let mut off = 0;
                        for &p in parts {
                            let pv = self.value(p);
                            let pc = pv.cols();
                            let mut data = Vec::with_capacity(pv.len());
                            for r in 0..pv.rows() {
                                data.extend_from_slice(&gd[r * n + off..r * n + off + pc]);
                            }
                            res.push((p, Array::from_parts(pv.shape().to_vec(), data)));
                            off += pc;
                        }
                    }
                }
                res
            }
            Op::Slice { x, axis, start } => {
                let xv = self.value(*x);
                let n = xv.cols();
                let mut dx = Array::zeros(xv.shape());
                let d = dx.data_mut();
                match axis {
                    0 => d[start * n..start * n + gd.len()].copy_from_slice(gd),
                    _ => {
                        let w = g.cols();
                        for r in 0..xv.rows() {
                            d[r * n + start..r * n + start + w]
                                .copy_from_slice(&gd[r * w..(r + 1) * w]);
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Dropout(a, mask) => unary(*a, &|i, gv| gv * mask[i]),
            Op::Gather(table, ids) => {
                let t = self.value(*table);
                let n = t.cols();
                let mut dt = Array::zeros(t.shape());
                let d = dt.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..n {
                        d[id * n + c] += gd[r * n + c];
                    }
                }
                vec![(*table, dt)]
            }
            Op::Reshape(a) => vec![(*a, g.clone().reshaped(self.value(*a).shape().to_vec())?)],
            Op::RepeatCols(a, k) => {
                let x = self.value(*a);
                let dx = gd.chunks(*k).map(|c| c.iter().sum()).collect();
                vec![(*a, Array::from_parts(x.shape().to_vec(), dx))]
            }
            Op::GroupSumCols(a, k) => {
                let x = self.value(*a);
                let mut dx = Vec::with_capacity(x.len());
                for &v in gd {
                    dx.extend(std::iter::repeat(v).take(*k));
                }
                vec![(*a, Array::from_parts(x.shape().to_vec(), dx))]
            }
            Op::SquashRows(a) => {
                let x = self.value(*a);
                let n = x.cols();
                let mut dx = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    let s = x.row_slice(r);
                    let gs = &gd[r * n..(r + 1) * n];
                    let sq: f64 = s.iter().map(|v| v * v).sum();
                    let norm = sq.sqrt();
                    let gscale = norm / (1.0 + sq);
                    // d/ds [g(|s|) s] = g I + (g'(|s|)/|s|) s sᵀ, with g' = (1-|s|²)/(1+|s|²)².
                    let radial = if norm > 0.0 {
                        (1.0 - sq) / ((1.0 + sq) * (1.0 + sq) * norm)
                    } else {
                        0.0
                    };
                    let sdotg: f64 = s.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        dx[r * n + c] = gscale * gs[c] + radial * sdotg * s[c];
                    }
                }
                vec![(*a, Array::from_parts(x.shape().to_vec(), dx))]
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Array> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&ins, y.unwrap(), g);
                inputs
                    .iter()
                    .zip(gs)
                    .filter_map(|(&v, gi)| gi.map(|gi| (v, gi)))
                    .collect()
            }
        })
    }
}
