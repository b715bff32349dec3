//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every builder method evaluates its primitive eagerly and records it on the
//! tape. Errors (shape mismatches, non-finite values) poison the graph: later
//! builders become no-ops and the first error is reported by [`Graph::value`]
//! and [`Graph::backward`].

use std::fmt;

use super::kernels::{self, ConvGeom, MatRef};
use super::param::{ParamId, ParamStore, Step};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("shape mismatch at node {node} ({op}): expected {expected}, got {actual}")]
    Shape {
        node: NodeId,
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: NodeId, op: &'static str },
    #[error("node {0} has not been evaluated in this graph")]
    NotEvaluated(NodeId),
    #[error("backward root {node} must have shape [1], has {shape:?}")]
    NonScalarRoot { node: NodeId, shape: Vec<usize> },
}

/// Which parameters receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Every parameter is differentiable.
    All,
    /// Only parameters tagged trainable in the given step.
    Step(Step),
    /// Pure evaluation; `backward` produces no parameter gradients.
    Off,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Input,
    Param(ParamId),
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    Concat(usize),
    Slice { axis: usize, start: usize },
    Gather(Vec<usize>),
    Reshape,
    Permute(Vec<usize>),
    Mean(usize),
    Sum(usize),
    SumAll,
    MeanAll,
    Relu,
    Hinge,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Softmax,
    L2Norm,
    CosineRows,
    CosineMatrix,
    Conv2d { stride: usize, pad: usize },
    Poisoned,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather(_) => "gather",
            Op::Reshape => "reshape",
            Op::Permute(_) => "permute",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::SumAll => "sum_all",
            Op::MeanAll => "mean_all",
            Op::Relu => "relu",
            Op::Hinge => "hinge",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softmax => "softmax",
            Op::L2Norm => "l2_norm",
            Op::CosineRows => "cosine",
            Op::CosineMatrix => "cosine_matrix",
            Op::Conv2d { .. } => "conv2d",
            Op::Poisoned => "poisoned",
        }
    }
}

/// Epsilon added to each norm inside cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// Deliberate corruption of one backward rule, used by mutation tests of the
/// gradient checker.
#[doc(hidden)]
#[derive(Clone, Copy, Debug)]
pub struct BackwardFault {
    pub op: &'static str,
    pub factor: f64,
}

pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    mode: GradMode,
    error: Option<GraphError>,
    pub(crate) fault: Option<BackwardFault>,
}

type OpResult = Result<Tensor, (String, String)>;

fn mismatch(expected: impl Into<String>, actual: impl Into<String>) -> (String, String) {
    (expected.into(), actual.into())
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Graph in which every parameter is differentiable.
    pub fn new() -> Self {
        Self::with_mode(GradMode::All)
    }

    /// Graph differentiating only parameters trainable in `step`.
    pub fn for_step(step: Step) -> Self {
        Self::with_mode(GradMode::Step(step))
    }

    /// Evaluation-only graph.
    pub fn inference() -> Self {
        Self::with_mode(GradMode::Off)
    }

    pub fn with_mode(mode: GradMode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            error: None,
            fault: None,
        }
    }

    pub fn mode(&self) -> GradMode {
        self.mode
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn error(&self) -> Option<&GraphError> {
        self.error.as_ref()
    }

    /// Forward value of a node, or the first error recorded on the graph.
    pub fn value(&self, id: NodeId) -> Result<&Tensor, GraphError> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(GraphError::NotEvaluated(id))
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64, GraphError> {
        let v = self.value(id)?;
        v.item().ok_or_else(|| GraphError::NonScalarRoot {
            node: id,
            shape: v.shape().to_vec(),
        })
    }

    /// Shape of a node; empty for poisoned nodes.
    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Sign of every ReLU and hinge input. Two evaluations with equal
    /// patterns lie on the same smooth piece of the function.
    pub fn kink_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu | Op::Hinge))
            .flat_map(|n| self.nodes[n.inputs[0].0].value.data().iter().map(|&x| x > 0.0))
            .collect()
    }

    fn poisoned(&self) -> bool {
        self.error.is_some()
    }

    fn push_node(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        id
    }

    fn placeholder(&mut self) -> NodeId {
        self.push_node(Op::Poisoned, Vec::new(), Tensor::from_parts(vec![0], vec![]), false)
    }

    fn record(&mut self, op: Op, inputs: Vec<NodeId>, f: impl FnOnce(&Self) -> OpResult) -> NodeId {
        if self.poisoned() {
            return self.placeholder();
        }
        let id = NodeId(self.nodes.len());
        let name = op.name();
        match f(self) {
            Ok(value) => {
                if value.first_non_finite().is_some() {
                    self.error = Some(GraphError::NonFinite { node: id, op: name });
                    return self.placeholder();
                }
                let rg = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
                self.push_node(op, inputs, value, rg)
            }
            Err((expected, actual)) => {
                self.error = Some(GraphError::Shape {
                    node: id,
                    op: name,
                    expected,
                    actual,
                });
                self.placeholder()
            }
        }
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    // ── leaves ──────────────────────────────────────────────────────────

    /// Binds a named input tensor.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        if self.poisoned() {
            return self.placeholder();
        }
        if value.first_non_finite().is_some() {
            let id = NodeId(self.nodes.len());
            self.error = Some(GraphError::NonFinite { node: id, op: "input" });
            return self.placeholder();
        }
        self.push_node(Op::Input, Vec::new(), value, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if self.poisoned() {
            return self.placeholder();
        }
        let p = store.get(id);
        let rg = match self.mode {
            GradMode::All => true,
            GradMode::Step(s) => p.trainable_in_steps.contains(s),
            GradMode::Off => false,
        };
        self.push_node(Op::Param(id), Vec::new(), p.value.clone(), rg)
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// `[m,k]·[k,n]`, or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.record(Op::MatMul, vec![a, b], |g| {
            let (ta, tb) = (g.v(a), g.v(b));
            match (ta.shape(), tb.shape()) {
                (&[m, k], &[k2, n]) if k == k2 => {
                    let mut out = vec![0.0; m * n];
                    kernels::gemm(MatRef::new(ta.data(), m, k), MatRef::new(tb.data(), k, n), 0.0, &mut out);
                    Ok(Tensor::from_parts(vec![m, n], out))
                }
                (&[bt, m, k], &[bt2, k2, n]) if k == k2 && bt == bt2 => {
                    let mut out = vec![0.0; bt * m * n];
                    for i in 0..bt {
                        kernels::gemm(
                            MatRef::new(&ta.data()[i * m * k..(i + 1) * m * k], m, k),
                            MatRef::new(&tb.data()[i * k * n..(i + 1) * k * n], k, n),
                            0.0,
                            &mut out[i * m * n..(i + 1) * m * n],
                        );
                    }
                    Ok(Tensor::from_parts(vec![bt, m, n], out))
                }
                (sa, sb) => Err(mismatch("[m,k]·[k,n] or [b,m,k]·[b,k,n]", format!("{sa:?}·{sb:?}"))),
            }
        })
    }

    /// Affine map `x·w + b` with row-broadcast bias.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        self.permute(x, &[1, 0])
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn broadcast_binary(&mut self, op: Op, a: NodeId, b: NodeId, f: fn(f64, f64) -> f64) -> NodeId {
        self.record(op, vec![a, b], |g| {
            let (ta, tb) = (g.v(a), g.v(b));
            if ta.shape() == tb.shape() {
                let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
                return Ok(Tensor::from_parts(ta.shape().to_vec(), data));
            }
            let shape = kernels::broadcast_shape(ta.shape(), tb.shape())
                .ok_or_else(|| mismatch("broadcast-compatible shapes", format!("{:?} and {:?}", ta.shape(), tb.shape())))?;
            let ma = kernels::broadcast_index_map(&shape, ta.shape());
            let mb = kernels::broadcast_index_map(&shape, tb.shape());
            let data = ma.iter().zip(&mb).map(|(&i, &j)| f(ta.data()[i], tb.data()[j])).collect();
            Ok(Tensor::from_parts(shape, data))
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.broadcast_binary(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.broadcast_binary(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.broadcast_binary(Op::Mul, a, b, |x, y| x * y)
    }

    fn unary(&mut self, op: Op, x: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        self.record(op, vec![x], |g| {
            let t = g.v(x);
            Ok(Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()))
        })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(Op::Scale(c), x, |v| c * v)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(Op::AddScalar, x, |v| v + c)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Relu, x, |v| v.max(0.0))
    }

    /// `max(0, x)`, recorded separately from ReLU for loss terms.
    pub fn hinge(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Hinge, x, |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, x, |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Tanh, x, f64::tanh)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp, x, f64::exp)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Log, x, f64::ln)
    }

    // ── structural ──────────────────────────────────────────────────────

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        self.record(Op::Concat(axis), parts.to_vec(), |g| {
            let first = g.v(*parts.first().ok_or_else(|| mismatch("at least one input", "none"))?);
            let rank = first.ndim();
            if axis >= rank {
                return Err(mismatch(format!("axis < {rank}"), format!("axis {axis}")));
            }
            let mut shape = first.shape().to_vec();
            shape[axis] = 0;
            for p in parts {
                let s = g.v(*p).shape();
                let compatible = s.len() == rank && (0..rank).all(|d| d == axis || s[d] == first.shape()[d]);
                if !compatible {
                    return Err(mismatch(format!("{:?} off axis {axis}", first.shape()), format!("{s:?}")));
                }
                shape[axis] += s[axis];
            }
            let (outer, _, inner) = kernels::axis_blocks(&shape, axis);
            let mut data = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for p in parts {
                    let t = g.v(*p);
                    let block = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                }
            }
            Ok(Tensor::from_parts(shape, data))
        })
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        self.record(Op::Slice { axis, start }, vec![x], |g| {
            let t = g.v(x);
            if axis >= t.ndim() || len == 0 || start + len > t.shape()[axis] {
                return Err(mismatch(
                    format!("slice {start}..{} within axis {axis}", start + len),
                    format!("{:?}", t.shape()),
                ));
            }
            let (outer, extent, inner) = kernels::axis_blocks(t.shape(), axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * extent * inner + start * inner;
                data.extend_from_slice(&t.data()[base..base + len * inner]);
            }
            let mut shape = t.shape().to_vec();
            shape[axis] = len;
            Ok(Tensor::from_parts(shape, data))
        })
    }

    /// Selects rows (entries along axis 0) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> NodeId {
        self.record(Op::Gather(indices.to_vec()), vec![x], |g| {
            let t = g.v(x);
            let rows = t.shape()[0];
            if indices.is_empty() || indices.iter().any(|&i| i >= rows) {
                return Err(mismatch(format!("non-empty row indices < {rows}"), format!("{indices:?}")));
            }
            let inner = t.len() / rows;
            let mut data = Vec::with_capacity(indices.len() * inner);
            for &i in indices {
                data.extend_from_slice(&t.data()[i * inner..(i + 1) * inner]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = indices.len();
            Ok(Tensor::from_parts(shape, data))
        })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        self.record(Op::Reshape, vec![x], |g| {
            let t = g.v(x);
            if shape.iter().product::<usize>() != t.len() || shape.contains(&0) {
                return Err(mismatch(format!("{} elements", t.len()), format!("{shape:?}")));
            }
            Ok(Tensor::from_parts(shape.to_vec(), t.data().to_vec()))
        })
    }

    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> NodeId {
        self.record(Op::Permute(axes.to_vec()), vec![x], |g| {
            let t = g.v(x);
            let mut seen = axes.to_vec();
            seen.sort_unstable();
            if seen != (0..t.ndim()).collect::<Vec<_>>() {
                return Err(mismatch(format!("permutation of {} axes", t.ndim()), format!("{axes:?}")));
            }
            let (shape, data) = kernels::permute(t.data(), t.shape(), axes);
            Ok(Tensor::from_parts(shape, data))
        })
    }

    // ── reductions ──────────────────────────────────────────────────────

    fn reduce_axis(&mut self, op: Op, x: NodeId, axis: usize, mean: bool) -> NodeId {
        self.record(op, vec![x], |g| {
            let t = g.v(x);
            if axis >= t.ndim() {
                return Err(mismatch(format!("axis < {}", t.ndim()), format!("axis {axis}")));
            }
            let (outer, extent, inner) = kernels::axis_blocks(t.shape(), axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for e in 0..extent {
                    let src = &t.data()[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                    for (acc, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
            if mean {
                data.iter_mut().for_each(|v| *v /= extent as f64);
            }
            Ok(Tensor::from_parts(reduced_shape(t.shape(), axis), data))
        })
    }

    pub fn mean(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.reduce_axis(Op::Mean(axis), x, axis, true)
    }

    pub fn sum(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.reduce_axis(Op::Sum(axis), x, axis, false)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.record(Op::SumAll, vec![x], |g| Ok(Tensor::scalar(g.v(x).data().iter().sum())))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        self.record(Op::MeanAll, vec![x], |g| {
            let t = g.v(x);
            Ok(Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64))
        })
    }

    // ── normalised maps ─────────────────────────────────────────────────

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.record(Op::Softmax, vec![x], |g| {
            let t = g.v(x);
            let d = *t.shape().last().unwrap();
            let mut data = t.data().to_vec();
            for row in data.chunks_mut(d) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
            Ok(Tensor::from_parts(t.shape().to_vec(), data))
        })
    }

    /// Euclidean norm over the last axis.
    pub fn l2_norm(&mut self, x: NodeId) -> NodeId {
        self.record(Op::L2Norm, vec![x], |g| {
            let t = g.v(x);
            let d = *t.shape().last().unwrap();
            let data = t.data().chunks(d).map(norm).collect();
            Ok(Tensor::from_parts(reduced_shape(t.shape(), t.ndim() - 1), data))
        })
    }

    /// Row-paired cosine similarity: `[p,d]`,`[p,d]` → `[p]` (vectors give `[1]`).
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.record(Op::CosineRows, vec![a, b], |g| {
            let (ta, tb) = (g.v(a), g.v(b));
            let ((pa, da), (pb, db)) = (as_rows(ta), as_rows(tb));
            if pa != pb || da != db || ta.ndim() > 2 || tb.ndim() > 2 {
                return Err(mismatch("matching [p,d] operands", format!("{:?} and {:?}", ta.shape(), tb.shape())));
            }
            let data = (0..pa)
                .map(|i| cosine_value(ta.row_at(i, da), tb.row_at(i, da)))
                .collect();
            Ok(Tensor::from_parts(vec![pa], data))
        })
    }

    /// All-pairs cosine similarity: `[p,d]`,`[q,d]` → `[p,q]`.
    pub fn cosine_matrix(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.record(Op::CosineMatrix, vec![a, b], |g| {
            let (ta, tb) = (g.v(a), g.v(b));
            let ((p, da), (q, db)) = (as_rows(ta), as_rows(tb));
            if da != db || ta.ndim() > 2 || tb.ndim() > 2 {
                return Err(mismatch("[p,d] and [q,d]", format!("{:?} and {:?}", ta.shape(), tb.shape())));
            }
            let mut dots = vec![0.0; p * q];
            kernels::gemm(MatRef::new(ta.data(), p, da), MatRef::new(tb.data(), q, da).t(), 0.0, &mut dots);
            let na: Vec<f64> = ta.data().chunks(da).map(|r| norm(r) + COSINE_EPS).collect();
            let nb: Vec<f64> = tb.data().chunks(da).map(|r| norm(r) + COSINE_EPS).collect();
            for i in 0..p {
                for j in 0..q {
                    dots[i * q + j] /= na[i] * nb[j];
                }
            }
            Ok(Tensor::from_parts(vec![p, q], dots))
        })
    }

    /// Convolution of NHWC input `[b,h,w,ci]` with HWIO kernel `[kh,kw,ci,co]`.
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, stride: usize, pad: usize) -> NodeId {
        self.record(Op::Conv2d { stride, pad }, vec![x, kernel], |g| {
            let (sx, sk) = (g.v(x).shape(), g.v(kernel).shape());
            let geom = conv_geom(sx, sk, stride, pad)
                .ok_or_else(|| mismatch("input [b,h,w,c] with kernel [kh,kw,c,co]", format!("{sx:?} and {sk:?}")))?;
            let out = geom.forward(g.v(x).data(), g.v(kernel).data());
            Ok(Tensor::from_parts(vec![geom.batch, geom.out_h(), geom.out_w(), geom.out_c], out))
        })
    }
}

pub(crate) fn conv_geom(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Option<ConvGeom> {
    match (x, k) {
        (&[batch, in_h, in_w, in_c], &[k_h, k_w, kc, out_c])
            if kc == in_c && stride > 0 && in_h + 2 * pad >= k_h && in_w + 2 * pad >= k_w =>
        {
            Some(ConvGeom { batch, in_h, in_w, in_c, k_h, k_w, out_c, stride, pad })
        }
        _ => None,
    }
}

pub(crate) fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

/// Views a 1-D or 2-D tensor as `(rows, cols)`.
pub(crate) fn as_rows(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [d] => (1, *d),
        s => (s[..s.len() - 1].iter().product(), *s.last().unwrap()),
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn cosine_value(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / ((norm(a) + COSINE_EPS) * (norm(b) + COSINE_EPS))
}

impl Tensor {
    pub(crate) fn row_at(&self, i: usize, width: usize) -> &[f64] {
        &self.data()[i * width..(i + 1) * width]
    }
}
