//! Reverse sweep over the tape.

use super::graph::{as_rows, conv_geom, norm, Graph, GraphError, NodeId, Op, COSINE_EPS};
use super::kernels::{self, MatRef};
use super::param::ParamStore;
use crate::tensor::Tensor;

impl Graph {
    /// Back-propagates from a scalar root, accumulating (`+=`) into the grad
    /// slot of every differentiable parameter reached.
    pub fn backward(&self, root: NodeId, store: &mut ParamStore) -> Result<(), GraphError> {
        if let Some(e) = self.error() {
            return Err(e.clone());
        }
        let root_node = self.nodes.get(root.index()).ok_or(GraphError::NotEvaluated(root))?;
        if root_node.value.shape() != [1] {
            return Err(GraphError::NonScalarRoot {
                node: root,
                shape: root_node.value.shape().to_vec(),
            });
        }
        if !root_node.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.index() + 1];
        grads[root.index()] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.index()).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param(pid) = node.op {
                store.get_mut(pid).grad.add_assign(&grad);
                continue;
            }
            let mut input_grads = self.input_grads(idx, &grad);
            if let Some(fault) = self.fault {
                if fault.op == node.op.name() {
                    for g in input_grads.iter_mut().flatten() {
                        g.data_mut().iter_mut().for_each(|v| *v *= fault.factor);
                    }
                }
            }
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                match &mut grads[input.index()] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, idx: usize, grad: &Tensor) -> Vec<Option<Tensor>> {
        let node = &self.nodes[idx];
        let inputs: Vec<&Tensor> = node.inputs.iter().map(|i| &self.nodes[i.index()].value).collect();
        let wants: Vec<bool> = node.inputs.iter().map(|i| self.nodes[i.index()].requires_grad).collect();
        let out = &node.value;
        let g = grad.data();
        let like = |t: &Tensor, data: Vec<f64>| Some(Tensor::from_parts(t.shape().to_vec(), data));
        let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Tensor>> {
            vec![like(inputs[0], (0..g.len()).map(f).collect())]
        };

        match &node.op {
            Op::Input | Op::Param(_) | Op::Poisoned => vec![],
            Op::MatMul => matmul_grads(inputs[0], inputs[1], grad, &wants),
            Op::Add | Op::Sub | Op::Mul => {
                let sign = if matches!(node.op, Op::Sub) { -1.0 } else { 1.0 };
                let is_mul = matches!(node.op, Op::Mul);
                let (a, b) = (inputs[0], inputs[1]);
                let mut out_grads = vec![None, None];
                for (k, (this, other)) in [(a, b), (b, a)].into_iter().enumerate() {
                    if !wants[k] {
                        continue;
                    }
                    let s = if k == 1 { sign } else { 1.0 };
                    let data: Vec<f64> = if is_mul {
                        if other.shape() == out.shape() {
                            g.iter().zip(other.data()).map(|(x, y)| x * y).collect()
                        } else {
                            let m = kernels::broadcast_index_map(out.shape(), other.shape());
                            g.iter().zip(m).map(|(x, j)| x * other.data()[j]).collect()
                        }
                    } else {
                        g.iter().map(|x| s * x).collect()
                    };
                    out_grads[k] = Some(unbroadcast(data, out.shape(), this.shape()));
                }
                out_grads
            }
            Op::Scale(c) => elementwise(&|i| c * g[i]),
            Op::AddScalar => vec![Some(grad.clone())],
            Op::Relu | Op::Hinge => {
                let x = inputs[0].data();
                elementwise(&|i| if x[i] > 0.0 { g[i] } else { 0.0 })
            }
            Op::Sigmoid => {
                let y = out.data();
                elementwise(&|i| g[i] * y[i] * (1.0 - y[i]))
            }
            Op::Tanh => {
                let y = out.data();
                elementwise(&|i| g[i] * (1.0 - y[i] * y[i]))
            }
            Op::Exp => {
                let y = out.data();
                elementwise(&|i| g[i] * y[i])
            }
            Op::Log => {
                let x = inputs[0].data();
                elementwise(&|i| g[i] / x[i])
            }
            Op::Concat(axis) => {
                let (outer, _, inner) = kernels::axis_blocks(out.shape(), *axis);
                let out_block = out.shape()[*axis] * inner;
                let mut offset = 0;
                inputs
                    .iter()
                    .zip(&wants)
                    .map(|(t, &want)| {
                        let block = t.shape()[*axis] * inner;
                        let start = offset;
                        offset += block;
                        want.then(|| {
                            let mut data = Vec::with_capacity(t.len());
                            for o in 0..outer {
                                data.extend_from_slice(&g[o * out_block + start..o * out_block + start + block]);
                            }
                            Tensor::from_parts(t.shape().to_vec(), data)
                        })
                    })
                    .collect()
            }
            Op::Slice { axis, start } => {
                let x = inputs[0];
                let (outer, extent, inner) = kernels::axis_blocks(x.shape(), *axis);
                let len = out.shape()[*axis];
                let mut data = vec![0.0; x.len()];
                for o in 0..outer {
                    let dst = o * extent * inner + start * inner;
                    data[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![like(x, data)]
            }
            Op::Gather(indices) => {
                let x = inputs[0];
                let inner = x.len() / x.shape()[0];
                let mut data = vec![0.0; x.len()];
                for (k, &i) in indices.iter().enumerate() {
                    for (acc, v) in data[i * inner..(i + 1) * inner].iter_mut().zip(&g[k * inner..(k + 1) * inner]) {
                        *acc += v;
                    }
                }
                vec![like(x, data)]
            }
            Op::Reshape => vec![like(inputs[0], g.to_vec())],
            Op::Permute(axes) => {
                let inv = kernels::inverse_axes(axes);
                let (_, data) = kernels::permute(g, out.shape(), &inv);
                vec![like(inputs[0], data)]
            }
            Op::Mean(axis) | Op::Sum(axis) => {
                let x = inputs[0];
                let (outer, extent, inner) = kernels::axis_blocks(x.shape(), *axis);
                let scale = if matches!(node.op, Op::Mean(_)) { 1.0 / extent as f64 } else { 1.0 };
                let mut data = Vec::with_capacity(x.len());
                for o in 0..outer {
                    for _ in 0..extent {
                        data.extend(g[o * inner..(o + 1) * inner].iter().map(|v| v * scale));
                    }
                }
                vec![like(x, data)]
            }
            Op::SumAll => vec![like(inputs[0], vec![g[0]; inputs[0].len()])],
            Op::MeanAll => {
                let n = inputs[0].len();
                vec![like(inputs[0], vec![g[0] / n as f64; n])]
            }
            Op::Softmax => {
                let y = out.data();
                let d = *out.shape().last().unwrap();
                let mut data = vec![0.0; y.len()];
                for r in 0..y.len() / d {
                    let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..d {
                        data[r * d + k] = yr[k] * (gr[k] - dot);
                    }
                }
                vec![like(inputs[0], data)]
            }
            Op::L2Norm => {
                let x = inputs[0];
                let d = *x.shape().last().unwrap();
                let n = out.data();
                let mut data = vec![0.0; x.len()];
                for r in 0..x.len() / d {
                    if n[r] > 0.0 {
                        for k in 0..d {
                            data[r * d + k] = g[r] * x.data()[r * d + k] / n[r];
                        }
                    }
                }
                vec![like(x, data)]
            }
            Op::CosineRows => cosine_rows_grads(inputs[0], inputs[1], out, grad, &wants),
            Op::CosineMatrix => cosine_matrix_grads(inputs[0], inputs[1], out, grad, &wants),
            Op::Conv2d { stride, pad } => {
                let (x, k) = (inputs[0], inputs[1]);
                let geom = conv_geom(x.shape(), k.shape(), *stride, *pad).expect("validated in forward");
                vec![
                    wants[0].then(|| Tensor::from_parts(x.shape().to_vec(), geom.grad_input(k.data(), g))),
                    wants[1].then(|| Tensor::from_parts(k.shape().to_vec(), geom.grad_kernel(x.data(), g))),
                ]
            }
        }
    }
}

/// Sums a broadcast gradient back down to `target` shape.
fn unbroadcast(data: Vec<f64>, out_shape: &[usize], target: &[usize]) -> Tensor {
    if out_shape == target {
        return Tensor::from_parts(target.to_vec(), data);
    }
    let map = kernels::broadcast_index_map(out_shape, target);
    let mut acc = vec![0.0; target.iter().product()];
    for (v, j) in data.into_iter().zip(map) {
        acc[j] += v;
    }
    Tensor::from_parts(target.to_vec(), acc)
}

fn matmul_grads(a: &Tensor, b: &Tensor, grad: &Tensor, wants: &[bool]) -> Vec<Option<Tensor>> {
    let (batch, m, k, n) = match (a.shape(), b.shape()) {
        (&[m, k], &[_, n]) => (1, m, k, n),
        (&[bt, m, k], &[_, _, n]) => (bt, m, k, n),
        _ => unreachable!("validated in forward"),
    };
    let g = grad.data();
    let ga = wants[0].then(|| {
        let mut out = vec![0.0; a.len()];
        for i in 0..batch {
            kernels::gemm(
                MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n),
                MatRef::new(&b.data()[i * k * n..(i + 1) * k * n], k, n).t(),
                0.0,
                &mut out[i * m * k..(i + 1) * m * k],
            );
        }
        Tensor::from_parts(a.shape().to_vec(), out)
    });
    let gb = wants[1].then(|| {
        let mut out = vec![0.0; b.len()];
        for i in 0..batch {
            kernels::gemm(
                MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k).t(),
                MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n),
                0.0,
                &mut out[i * k * n..(i + 1) * k * n],
            );
        }
        Tensor::from_parts(b.shape().to_vec(), out)
    });
    vec![ga, gb]
}

/// d cos(a,b)/da = b/(Da·Db) − cos · a/(Da·|a|), with Da = |a|+ε.
fn cosine_rows_grads(a: &Tensor, b: &Tensor, out: &Tensor, grad: &Tensor, wants: &[bool]) -> Vec<Option<Tensor>> {
    let (p, d) = as_rows(a);
    let one_side = |x: &Tensor, y: &Tensor| {
        let mut data = vec![0.0; x.len()];
        for i in 0..p {
            let (xr, yr) = (x.row_at(i, d), y.row_at(i, d));
            let (nx, ny) = (norm(xr), norm(yr));
            let (dx, dy) = (nx + COSINE_EPS, ny + COSINE_EPS);
            let c = out.data()[i];
            let gi = grad.data()[i];
            for k in 0..d {
                let radial = if nx > 0.0 { c * xr[k] / (dx * nx) } else { 0.0 };
                data[i * d + k] = gi * (yr[k] / (dx * dy) - radial);
            }
        }
        Tensor::from_parts(x.shape().to_vec(), data)
    };
    vec![wants[0].then(|| one_side(a, b)), wants[1].then(|| one_side(b, a))]
}

fn cosine_matrix_grads(a: &Tensor, b: &Tensor, out: &Tensor, grad: &Tensor, wants: &[bool]) -> Vec<Option<Tensor>> {
    let (p, d) = as_rows(a);
    let (q, _) = as_rows(b);
    let c = out.data();
    let g = grad.data();
    let na: Vec<f64> = a.data().chunks(d).map(norm).collect();
    let nb: Vec<f64> = b.data().chunks(d).map(norm).collect();
    // side(x, y, transposed): gradient for x where out[i][j] pairs x_i with y_j
    let side = |x: &Tensor, y: &Tensor, nx: &[f64], ny: &[f64], rows: usize, cols: usize, transposed: bool| {
        let at = |i: usize, j: usize| if transposed { j * rows + i } else { i * cols + j };
        // weights w[i][j] = g_ij / Dy_j
        let mut w = vec![0.0; rows * cols];
        let mut radial = vec![0.0; rows];
        for i in 0..rows {
            for j in 0..cols {
                let idx = at(i, j);
                w[i * cols + j] = g[idx] / (ny[j] + COSINE_EPS);
                radial[i] += g[idx] * c[idx];
            }
        }
        let mut data = vec![0.0; rows * d];
        kernels::gemm(MatRef::new(&w, rows, cols), MatRef::new(y.data(), cols, d), 0.0, &mut data);
        for i in 0..rows {
            let dx = nx[i] + COSINE_EPS;
            let xr = x.row_at(i, d);
            for k in 0..d {
                let r = if nx[i] > 0.0 { radial[i] * xr[k] / nx[i] } else { 0.0 };
                data[i * d + k] = (data[i * d + k] - r) / dx;
            }
        }
        Tensor::from_parts(x.shape().to_vec(), data)
    };
    vec![
        wants[0].then(|| side(a, b, &na, &nb, p, q, false)),
        wants[1].then(|| side(b, a, &nb, &na, q, p, true)),
    ]
}
