//! Reverse-mode differentiation by recording primitives on a linear tape.

use std::sync::atomic::{AtomicU32, Ordering};

use super::graph::{lattice_from_rows, pick_nll_value, Graph};
use super::tensor::{axpy, dot};
use super::{Gradients, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(0);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: usize, w: usize, b: Option<usize> },
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    LogSoftmax(usize),
    OuterAdd(usize, usize),
    ConcatCols(usize, usize),
    SliceRows { x: usize, start: usize },
    StackRows(Vec<usize>),
    GatherRows { table: usize, ids: Vec<usize> },
    Sum(usize),
    PickNll { x: usize, targets: Vec<usize> },
    Transducer { x: usize, grad: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward pass over parameters of one [`ParamSet`].
///
/// Nodes are appended after their inputs, so index order is a topological
/// order and the backward sweep is a single reverse scan.
pub struct Tape<'p> {
    id: u32,
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn val(&self, v: &Var) -> &Tensor {
        debug_assert_eq!(v.tape, self.id, "node from another tape");
        &self.nodes[v.idx].value
    }

    /// Gradient of the scalar `loss` w.r.t. every parameter of the set.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::ForeignNode);
        }
        let root = &self.nodes[loss.idx].value;
        if !root.is_scalar() {
            return Err(Error::NotScalar(root.shape().to_vec()));
        }
        let mut grads = Gradients::empty(self.params.len());
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.idx).map(|_| None).collect();
        adj[loss.idx] = Some(vec![1.0]);

        for i in (0..=loss.idx).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.accumulate(*id, &dy, node.value.shape()),
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
                    let n = xv.rows();
                    {
                        let dx = slot(&mut adj, *x, xv.numel());
                        for r in 0..n {
                            let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                            for o in 0..out_dim {
                                let g = dy[r * out_dim + o];
                                if g != 0.0 {
                                    axpy(dxr, g, wv.row(o));
                                }
                            }
                        }
                    }
                    {
                        let dw = slot(&mut adj, *w, wv.numel());
                        for r in 0..n {
                            let xr = xv.row(r);
                            for o in 0..out_dim {
                                let g = dy[r * out_dim + o];
                                if g != 0.0 {
                                    axpy(&mut dw[o * in_dim..(o + 1) * in_dim], g, xr);
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        let db = slot(&mut adj, *b, out_dim);
                        for r in 0..n {
                            for o in 0..out_dim {
                                db[o] += dy[r * out_dim + o];
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    {
                        let da = slot(&mut adj, *a, m * k);
                        for r in 0..m {
                            let dyr = &dy[r * n..(r + 1) * n];
                            for p in 0..k {
                                da[r * k + p] += dot(dyr, bv.row(p));
                            }
                        }
                    }
                    {
                        let db = slot(&mut adj, *b, k * n);
                        for r in 0..m {
                            let dyr = &dy[r * n..(r + 1) * n];
                            for p in 0..k {
                                axpy(&mut db[p * n..(p + 1) * n], av.row(r)[p], dyr);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut adj, *a, dy.len()), &dy, 1.0);
                    add_into(slot(&mut adj, *b, dy.len()), &dy, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&mut adj, *a, dy.len()), &dy, 1.0);
                    add_into(slot(&mut adj, *b, dy.len()), &dy, -1.0);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[*a].value.data();
                    let bv = self.nodes[*b].value.data();
                    let da = slot(&mut adj, *a, dy.len());
                    for j in 0..dy.len() {
                        da[j] += dy[j] * bv[j];
                    }
                    let db = slot(&mut adj, *b, dy.len());
                    for j in 0..dy.len() {
                        db[j] += dy[j] * av[j];
                    }
                }
                Op::Scale(x, f) => add_into(slot(&mut adj, *x, dy.len()), &dy, *f),
                Op::Relu(x) => {
                    let y = node.value.data();
                    let dx = slot(&mut adj, *x, dy.len());
                    for j in 0..dy.len() {
                        if y[j] > 0.0 {
                            dx[j] += dy[j];
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let dx = slot(&mut adj, *x, dy.len());
                    for j in 0..dy.len() {
                        dx[j] += dy[j] * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let dx = slot(&mut adj, *x, dy.len());
                    for j in 0..dy.len() {
                        dx[j] += dy[j] * (1.0 - y[j] * y[j]);
                    }
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let c = y.cols();
                    let dx = slot(&mut adj, *x, dy.len());
                    for r in 0..y.rows() {
                        let dyr = &dy[r * c..(r + 1) * c];
                        let s: f64 = dyr.iter().sum();
                        let yr = y.row(r);
                        for j in 0..c {
                            dx[r * c + j] += dyr[j] - yr[j].exp() * s;
                        }
                    }
                }
                Op::OuterAdd(a, b) => {
                    let m = self.nodes[*a].value.rows();
                    let k = self.nodes[*b].value.rows();
                    let n = node.value.cols();
                    {
                        let da = slot(&mut adj, *a, m * n);
                        for i in 0..m {
                            for j in 0..k {
                                let r = (i * k + j) * n;
                                add_into(&mut da[i * n..(i + 1) * n], &dy[r..r + n], 1.0);
                            }
                        }
                    }
                    let db = slot(&mut adj, *b, k * n);
                    for i in 0..m {
                        for j in 0..k {
                            let r = (i * k + j) * n;
                            add_into(&mut db[j * n..(j + 1) * n], &dy[r..r + n], 1.0);
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let n1 = self.nodes[*a].value.cols();
                    let n2 = self.nodes[*b].value.cols();
                    let m = node.value.rows();
                    {
                        let da = slot(&mut adj, *a, m * n1);
                        for r in 0..m {
                            let src = &dy[r * (n1 + n2)..r * (n1 + n2) + n1];
                            add_into(&mut da[r * n1..(r + 1) * n1], src, 1.0);
                        }
                    }
                    let db = slot(&mut adj, *b, m * n2);
                    for r in 0..m {
                        let src = &dy[r * (n1 + n2) + n1..(r + 1) * (n1 + n2)];
                        add_into(&mut db[r * n2..(r + 1) * n2], src, 1.0);
                    }
                }
                Op::SliceRows { x, start } => {
                    let xv = &self.nodes[*x].value;
                    let c = xv.cols();
                    let dx = slot(&mut adj, *x, xv.numel());
                    add_into(&mut dx[start * c..start * c + dy.len()], &dy, 1.0);
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.numel();
                        add_into(slot(&mut adj, p, len), &dy[off..off + len], 1.0);
                        off += len;
                    }
                }
                Op::GatherRows { table, ids } => {
                    let tv = &self.nodes[*table].value;
                    let c = tv.cols();
                    let dt = slot(&mut adj, *table, tv.numel());
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * c..(id + 1) * c], &dy[r * c..(r + 1) * c], 1.0);
                    }
                }
                Op::Sum(x) => {
                    let len = self.nodes[*x].value.numel();
                    for v in slot(&mut adj, *x, len).iter_mut() {
                        *v += dy[0];
                    }
                }
                Op::PickNll { x, targets } => {
                    let xv = &self.nodes[*x].value;
                    let c = xv.cols();
                    let dx = slot(&mut adj, *x, xv.numel());
                    for (r, &t) in targets.iter().enumerate() {
                        dx[r * c + t] -= dy[0];
                    }
                }
                Op::Transducer { x, grad } => {
                    add_into(slot(&mut adj, *x, grad.numel()), grad.data(), dy[0]);
                }
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("backward"));
        }
        Ok(grads)
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    adj[idx].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    if factor == 1.0 {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    } else {
        axpy(dst, factor, src);
    }
}

impl Graph for Tape<'_> {
    type Node = Var;

    fn params(&self) -> &ParamSet {
        self.params
    }

    fn value<'a>(&'a self, node: &'a Var) -> &'a Tensor {
        self.val(node)
    }

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(idx) = self.param_nodes[id.index()] {
            return Var { tape: self.id, idx };
        }
        let value = self.params.get(id).value.clone();
        let v = self.push(value, Op::Param(id));
        self.param_nodes[id.index()] = Some(v.idx);
        v
    }

    fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn linear(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let value = self.val(x).linear(self.val(w), b.map(|b| self.val(b)))?;
        Ok(self.push(
            value,
            Op::Linear {
                x: x.idx,
                w: w.idx,
                b: b.map(|b| b.idx),
            },
        ))
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(a).matmul(self.val(b))?;
        Ok(self.push(value, Op::MatMul(a.idx, b.idx)))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(a).add(self.val(b))?;
        Ok(self.push(value, Op::Add(a.idx, b.idx)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(a).sub(self.val(b))?;
        Ok(self.push(value, Op::Sub(a.idx, b.idx)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(a).mul(self.val(b))?;
        Ok(self.push(value, Op::Mul(a.idx, b.idx)))
    }

    fn scale(&mut self, x: &Var, factor: f64) -> Result<Var> {
        let value = self.val(x).scale(factor).ensure_finite("scale")?;
        Ok(self.push(value, Op::Scale(x.idx, factor)))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let value = self.val(x).relu();
        self.push(value, Op::Relu(x.idx))
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let value = self.val(x).sigmoid();
        self.push(value, Op::Sigmoid(x.idx))
    }

    fn tanh(&mut self, x: &Var) -> Var {
        let value = self.val(x).tanh();
        self.push(value, Op::Tanh(x.idx))
    }

    fn log_softmax(&mut self, x: &Var) -> Var {
        let value = self.val(x).log_softmax();
        self.push(value, Op::LogSoftmax(x.idx))
    }

    fn outer_add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(a).outer_add(self.val(b))?;
        Ok(self.push(value, Op::OuterAdd(a.idx, b.idx)))
    }

    fn concat_cols(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(a).concat_cols(self.val(b))?;
        Ok(self.push(value, Op::ConcatCols(a.idx, b.idx)))
    }

    fn slice_rows(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let value = self.val(x).slice_rows(start, len)?;
        Ok(self.push(value, Op::SliceRows { x: x.idx, start }))
    }

    fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(p)).collect();
        let value = Tensor::stack_rows(&refs)?;
        Ok(self.push(value, Op::StackRows(parts.iter().map(|p| p.idx).collect())))
    }

    fn gather_rows(&mut self, table: &Var, ids: &[usize]) -> Result<Var> {
        let value = self.val(table).gather_rows(ids)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                table: table.idx,
                ids: ids.to_vec(),
            },
        ))
    }

    fn sum(&mut self, x: &Var) -> Var {
        let value = Tensor::scalar(self.val(x).sum());
        self.push(value, Op::Sum(x.idx))
    }

    fn pick_nll(&mut self, x: &Var, targets: &[usize]) -> Result<Var> {
        let nll = pick_nll_value(self.val(x), targets)?;
        Ok(self.push(
            Tensor::scalar(nll),
            Op::PickNll {
                x: x.idx,
                targets: targets.to_vec(),
            },
        ))
    }

    fn transducer_loss(&mut self, logp: &Var, frames: usize, targets: &[usize]) -> Result<Var> {
        let lat = lattice_from_rows(self.val(logp), frames, targets)?;
        let (loss, grad) = lat.loss_and_grad();
        let grad = grad.reshape(vec![self.val(logp).rows(), self.val(logp).cols()])?;
        Ok(self.push(Tensor::scalar(loss), Op::Transducer { x: logp.idx, grad }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_linear_gives_broadcast_input() {
        let mut ps = ParamSet::new();
        let w = ps
            .add("w", Tensor::matrix(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap())
            .unwrap();
        let mut tape = Tape::new(&ps);
        let x = tape.constant(Tensor::matrix(1, 2, vec![2.0, -7.0]).unwrap());
        let wv = tape.param(w);
        let y = tape.linear(&x, &wv, None).unwrap();
        let loss = tape.sum(&y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, -7.0, 2.0, -7.0, 2.0, -7.0]);
    }

    #[test]
    fn unused_parameter_gets_zero() {
        let mut ps = ParamSet::new();
        let a = ps.add("a", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let b = ps.add("b", Tensor::vector(vec![3.0]).unwrap()).unwrap();
        let mut tape = Tape::new(&ps);
        let av = tape.param(a);
        let _bv = tape.param(b);
        let loss = tape.sum(&av);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(b).is_none());
        assert_eq!(g.dense(b, &ps).data(), &[0.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", Tensor::vector(vec![-1.0, 2.0, 0.0]).unwrap()).unwrap();
        let mut tape = Tape::new(&ps);
        let xv = tape.param(x);
        let r = tape.relu(&xv);
        let loss = tape.sum(&r);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let mut t1 = Tape::new(&ps);
        let xv = t1.param(x);
        assert!(matches!(t1.backward(xv), Err(Error::NotScalar(_))));

        let mut t2 = Tape::new(&ps);
        let xv2 = t2.param(x);
        let s2 = t2.sum(&xv2);
        assert!(matches!(t1.backward(s2), Err(Error::ForeignNode)));
    }

    #[test]
    fn param_node_is_memoized() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let mut tape = Tape::new(&ps);
        let a = tape.param(x);
        let b = tape.param(x);
        assert_eq!(a, b);
        assert_eq!(tape.len(), 1);
    }
}
