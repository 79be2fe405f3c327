//! Wengert-tape reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass, in
//! issue order, so the list is topologically sorted by construction.
//! [`Tape::backward`] replays it once in reverse, accumulating adjoints.
//! Tapes are rebuilt per forward pass and confined to one thread; models
//! sharing read-only parameters may run tapes concurrently.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Gradient of a scalar output with respect to one recorded leaf.
#[derive(Debug, Clone)]
pub struct GradientResult {
    /// Same shape as the leaf it differentiates.
    pub gradient: Tensor,
    /// Value of the scalar output at the forward point.
    pub value: f64,
}

#[derive(Debug, Clone)]
enum Op {
    Matmul { a: usize, b: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Tanh { a: usize, out: usize },
    Relu { a: usize, out: usize },
    Softmax { a: usize, out: usize },
    Dot { a: usize, b: usize, out: usize },
    Sum { a: usize, out: usize },
    Scale { a: usize, factor: f64, out: usize },
    Transpose { a: usize, out: usize },
    Ln { a: usize, out: usize },
}

/// Recorded forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Record an input (leaf) node. Leaves are what gradients can be asked for.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(value);
        NodeId(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0]
    }

    fn push(&mut self, value: Tensor, op: impl FnOnce(usize) -> Op) -> NodeId {
        let out = self.nodes.len();
        self.nodes.push(value);
        self.ops.push(op(out));
        NodeId(out)
    }

    /// `a @ b` for 2-D operands, `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let ok = ta.shape().len() == 2 && tb.shape().len() == 2 && ta.shape()[1] == tb.shape()[0];
        Tensor::conformable("matmul", ta, tb, ok)?;
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = mm(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out), |out| Op::Matmul {
            a: a.0,
            b: b.0,
            out,
        }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        Tensor::conformable("add", ta, tb, ta.shape() == tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data), |out| Op::Add {
            a: a.0,
            b: b.0,
            out,
        }))
    }

    /// Hadamard product of two same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        Tensor::conformable("mul", ta, tb, ta.shape() == tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data), |out| Op::Mul {
            a: a.0,
            b: b.0,
            out,
        }))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0];
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|v| v.tanh()).collect(),
        );
        self.push(t, |out| Op::Tanh { a: a.0, out })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0];
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|v| v.max(0.0)).collect(),
        );
        self.push(t, |out| Op::Relu { a: a.0, out })
    }

    /// Softmax over all entries, with max subtraction for stability.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0];
        let max = ta.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = ta.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let t = Tensor::new(
            ta.shape().to_vec(),
            exps.iter().map(|e| e / total).collect(),
        );
        self.push(t, |out| Op::Softmax { a: a.0, out })
    }

    /// Inner product of two same-shape tensors, flattened. Yields a scalar.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        Tensor::conformable("dot", ta, tb, ta.shape() == tb.shape())?;
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(v), |out| Op::Dot {
            a: a.0,
            b: b.0,
            out,
        }))
    }

    /// Sum of all entries. Yields a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].data().iter().sum();
        self.push(Tensor::scalar(v), |out| Op::Sum { a: a.0, out })
    }

    /// Multiply every entry by a constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let t = self.nodes[a.0].scaled(factor);
        self.push(t, |out| Op::Scale {
            a: a.0,
            factor,
            out,
        })
    }

    /// Elementwise natural log. Callers must keep inputs strictly positive
    /// (here it is only ever applied to softmax outputs).
    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0];
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|v| v.ln()).collect(),
        );
        self.push(t, |out| Op::Ln { a: a.0, out })
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = &self.nodes[a.0];
        Tensor::conformable("transpose", ta, ta, ta.shape().len() == 2)?;
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let t = Tensor::new(vec![c, r], transpose_data(ta.data(), r, c));
        Ok(self.push(t, |out| Op::Transpose { a: a.0, out }))
    }

    /// Reverse sweep from a scalar output. Adjoints for every node are
    /// computed in one pass; query them via [`BackwardPass::gradient`].
    pub fn backward(&self, output: NodeId) -> Result<BackwardPass> {
        if output.0 >= self.nodes.len() {
            return Err(Error::NodeNotOnTape { id: output.0 });
        }
        let out_tensor = &self.nodes[output.0];
        if !out_tensor.is_scalar() {
            return Err(Error::NonScalarOutput {
                shape: out_tensor.shape().to_vec(),
            });
        }

        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        grads[output.0].data_mut()[0] = 1.0;

        for op in self.ops.iter().rev() {
            self.accumulate(op, &mut grads);
        }

        Ok(BackwardPass {
            grads,
            value: out_tensor.item(),
        })
    }

    /// Gradient of a scalar output with respect to a single leaf.
    pub fn backward_wrt(&self, output: NodeId, wrt: NodeId) -> Result<GradientResult> {
        if wrt.0 >= self.nodes.len() {
            return Err(Error::NodeNotOnTape { id: wrt.0 });
        }
        let pass = self.backward(output)?;
        Ok(GradientResult {
            gradient: pass.grads[wrt.0].clone(),
            value: pass.value,
        })
    }

    fn accumulate(&self, op: &Op, grads: &mut [Tensor]) {
        match *op {
            Op::Matmul { a, b, out } => {
                let (ta, tb) = (&self.nodes[a], &self.nodes[b]);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let g = grads[out].data().to_vec();
                // dA = G @ B^T, dB = A^T @ G
                let da = mm_bt(&g, tb.data(), m, n, k);
                let db = mm_at(ta.data(), &g, m, k, n);
                for (dst, src) in grads[a].data_mut().iter_mut().zip(&da) {
                    *dst += src;
                }
                for (dst, src) in grads[b].data_mut().iter_mut().zip(&db) {
                    *dst += src;
                }
            }
            Op::Add { a, b, out } => {
                let g = grads[out].data().to_vec();
                for (dst, src) in grads[a].data_mut().iter_mut().zip(&g) {
                    *dst += src;
                }
                for (dst, src) in grads[b].data_mut().iter_mut().zip(&g) {
                    *dst += src;
                }
            }
            Op::Mul { a, b, out } => {
                let g = grads[out].data().to_vec();
                let (va, vb) = (self.nodes[a].data().to_vec(), self.nodes[b].data().to_vec());
                for ((dst, src), other) in grads[a].data_mut().iter_mut().zip(&g).zip(&vb) {
                    *dst += src * other;
                }
                for ((dst, src), other) in grads[b].data_mut().iter_mut().zip(&g).zip(&va) {
                    *dst += src * other;
                }
            }
            Op::Tanh { a, out } => {
                let g = grads[out].data().to_vec();
                let y = self.nodes[out].data().to_vec();
                for ((dst, gi), yi) in grads[a].data_mut().iter_mut().zip(&g).zip(&y) {
                    *dst += gi * (1.0 - yi * yi);
                }
            }
            Op::Relu { a, out } => {
                let g = grads[out].data().to_vec();
                let x = self.nodes[a].data().to_vec();
                for ((dst, gi), xi) in grads[a].data_mut().iter_mut().zip(&g).zip(&x) {
                    if *xi > 0.0 {
                        *dst += gi;
                    }
                }
            }
            Op::Softmax { a, out } => {
                // Full Jacobian-vector product: ds_i = s_i * (g_i - sum_j g_j s_j).
                let g = grads[out].data().to_vec();
                let s = self.nodes[out].data().to_vec();
                let inner: f64 = g.iter().zip(&s).map(|(gi, si)| gi * si).sum();
                for ((dst, gi), si) in grads[a].data_mut().iter_mut().zip(&g).zip(&s) {
                    *dst += si * (gi - inner);
                }
            }
            Op::Dot { a, b, out } => {
                let g = grads[out].item();
                let (va, vb) = (self.nodes[a].data().to_vec(), self.nodes[b].data().to_vec());
                for (dst, other) in grads[a].data_mut().iter_mut().zip(&vb) {
                    *dst += g * other;
                }
                for (dst, other) in grads[b].data_mut().iter_mut().zip(&va) {
                    *dst += g * other;
                }
            }
            Op::Sum { a, out } => {
                let g = grads[out].item();
                for dst in grads[a].data_mut() {
                    *dst += g;
                }
            }
            Op::Scale { a, factor, out } => {
                let g = grads[out].data().to_vec();
                for (dst, gi) in grads[a].data_mut().iter_mut().zip(&g) {
                    *dst += factor * gi;
                }
            }
            Op::Transpose { a, out } => {
                let ta = &self.nodes[a];
                let (r, c) = (ta.shape()[0], ta.shape()[1]);
                // grads[out] is c x r; transpose it back to r x c.
                let gt = transpose_data(grads[out].data(), c, r);
                for (dst, src) in grads[a].data_mut().iter_mut().zip(&gt) {
                    *dst += src;
                }
            }
            Op::Ln { a, out } => {
                let g = grads[out].data().to_vec();
                let x = self.nodes[a].data().to_vec();
                for ((dst, gi), xi) in grads[a].data_mut().iter_mut().zip(&g).zip(&x) {
                    *dst += gi / xi;
                }
            }
        }
    }
}

/// Adjoints produced by one reverse sweep.
#[derive(Debug)]
pub struct BackwardPass {
    grads: Vec<Tensor>,
    value: f64,
}

impl BackwardPass {
    pub fn gradient(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aip * b[p * n + j];
            }
        }
    }
    out
}

/// `a^T @ b` where a is m x k and b is m x n; result k x n.
fn mm_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                out[p * n + j] += aip * b[i * n + j];
            }
        }
    }
    out
}

/// `a @ b^T` where a is m x n and b is k x n; result m x k.
fn mm_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            let mut acc = 0.0;
            for p in 0..n {
                acc += a[i * n + p] * b[j * n + p];
            }
            out[i * k + j] = acc;
        }
    }
    out
}

fn transpose_data(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
