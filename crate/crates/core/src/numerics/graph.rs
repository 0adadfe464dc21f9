use std::sync::Arc;

use super::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::lattice::LatticeLogProbs;

/// The primitive set the models are written against.
///
/// Two implementations exist: [`super::Tape`] records every op for reverse-mode
/// differentiation, [`Eval`] only computes values. Both call the same tensor
/// kernels, so a forward pass gives bit-identical values on either.
pub trait Graph {
    type Node: Clone;

    fn params(&self) -> &ParamSet;
    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor;

    /// Node holding a parameter's current value. Repeated calls return the same node.
    fn param(&mut self, id: ParamId) -> Self::Node;
    fn constant(&mut self, value: Tensor) -> Self::Node;

    /// `x * w^T + b`, `w` stored `[out x in]`.
    fn linear(&mut self, x: &Self::Node, w: &Self::Node, b: Option<&Self::Node>) -> Result<Self::Node>;
    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn scale(&mut self, x: &Self::Node, factor: f64) -> Result<Self::Node>;
    fn relu(&mut self, x: &Self::Node) -> Self::Node;
    fn sigmoid(&mut self, x: &Self::Node) -> Self::Node;
    fn tanh(&mut self, x: &Self::Node) -> Self::Node;
    fn log_softmax(&mut self, x: &Self::Node) -> Self::Node;
    fn outer_add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn concat_cols(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn slice_rows(&mut self, x: &Self::Node, start: usize, len: usize) -> Result<Self::Node>;
    fn stack_rows(&mut self, parts: &[Self::Node]) -> Result<Self::Node>;
    fn gather_rows(&mut self, table: &Self::Node, ids: &[usize]) -> Result<Self::Node>;
    fn sum(&mut self, x: &Self::Node) -> Self::Node;
    /// `-sum_i x[i, targets[i]]`.
    fn pick_nll(&mut self, x: &Self::Node, targets: &[usize]) -> Result<Self::Node>;
    /// Transducer loss of `logp` laid out `[T*(U+1) x (V+1)]`, blank in column 0.
    fn transducer_loss(&mut self, logp: &Self::Node, frames: usize, targets: &[usize]) -> Result<Self::Node>;
}

pub(crate) fn pick_nll_value(x: &Tensor, targets: &[usize]) -> Result<f64> {
    if targets.len() != x.rows() {
        return Err(Error::dim(
            "pick_nll",
            format!("{} targets for {} rows", targets.len(), x.rows()),
        ));
    }
    let c = x.cols();
    let mut nll = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::dim("pick_nll", format!("target {t} of {c} classes")));
        }
        nll -= x.row(i)[t];
    }
    Ok(nll)
}

pub(crate) fn lattice_from_rows(logp: &Tensor, frames: usize, targets: &[usize]) -> Result<LatticeLogProbs> {
    let u1 = targets.len() + 1;
    if frames == 0 || logp.rows() != frames * u1 {
        return Err(Error::dim(
            "transducer_loss",
            format!("{} rows for T={frames}, U={}", logp.rows(), targets.len()),
        ));
    }
    let v1 = logp.cols();
    let t = logp.clone().reshape(vec![frames, u1, v1])?;
    LatticeLogProbs::new(t, targets.to_vec())
}

/// Value-only graph for inference.
pub struct Eval<'p> {
    params: &'p ParamSet,
    cache: Vec<Option<Arc<Tensor>>>,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            cache: vec![None; params.len()],
        }
    }
}

impl Graph for Eval<'_> {
    type Node = Arc<Tensor>;

    fn params(&self) -> &ParamSet {
        self.params
    }

    fn value<'a>(&'a self, node: &'a Arc<Tensor>) -> &'a Tensor {
        node
    }

    fn param(&mut self, id: ParamId) -> Arc<Tensor> {
        let params = self.params;
        self.cache[id.index()]
            .get_or_insert_with(|| Arc::new(params.get(id).value.clone()))
            .clone()
    }

    fn constant(&mut self, value: Tensor) -> Arc<Tensor> {
        Arc::new(value)
    }

    fn linear(&mut self, x: &Arc<Tensor>, w: &Arc<Tensor>, b: Option<&Arc<Tensor>>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(x.linear(w, b.map(|b| &**b))?))
    }

    fn matmul(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(a.matmul(b)?))
    }

    fn add(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(a.add(b)?))
    }

    fn sub(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(a.sub(b)?))
    }

    fn mul(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(a.mul(b)?))
    }

    fn scale(&mut self, x: &Arc<Tensor>, factor: f64) -> Result<Arc<Tensor>> {
        Ok(Arc::new(x.scale(factor).ensure_finite("scale")?))
    }

    fn relu(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(x.relu())
    }

    fn sigmoid(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(x.sigmoid())
    }

    fn tanh(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(x.tanh())
    }

    fn log_softmax(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(x.log_softmax())
    }

    fn outer_add(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(a.outer_add(b)?))
    }

    fn concat_cols(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(a.concat_cols(b)?))
    }

    fn slice_rows(&mut self, x: &Arc<Tensor>, start: usize, len: usize) -> Result<Arc<Tensor>> {
        Ok(Arc::new(x.slice_rows(start, len)?))
    }

    fn stack_rows(&mut self, parts: &[Arc<Tensor>]) -> Result<Arc<Tensor>> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| &**p).collect();
        Ok(Arc::new(Tensor::stack_rows(&refs)?))
    }

    fn gather_rows(&mut self, table: &Arc<Tensor>, ids: &[usize]) -> Result<Arc<Tensor>> {
        Ok(Arc::new(table.gather_rows(ids)?))
    }

    fn sum(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(Tensor::scalar(x.sum()))
    }

    fn pick_nll(&mut self, x: &Arc<Tensor>, targets: &[usize]) -> Result<Arc<Tensor>> {
        Ok(Arc::new(Tensor::scalar(pick_nll_value(x, targets)?)))
    }

    fn transducer_loss(&mut self, logp: &Arc<Tensor>, frames: usize, targets: &[usize]) -> Result<Arc<Tensor>> {
        let lat = lattice_from_rows(logp, frames, targets)?;
        Ok(Arc::new(Tensor::scalar(lat.transducer_loss())))
    }
}
