use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with shape metadata.
///
/// Most kernels treat a tensor as a matrix of `rows() x cols()` where `cols`
/// is the last extent and `rows` is the product of the leading extents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim("tensor", format!("extents must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {n} values, data has {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::dim(op, format!("expected a matrix, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `a[m x k] * b[k x n]`.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = b.as_matrix("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] * [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = self.data[i * k + p];
                axpy(orow, aip, &b.data[p * n..(p + 1) * n]);
            }
        }
        Tensor::matrix(m, n, out)?.ensure_finite("matmul")
    }

    /// Affine map `x * w^T + bias` with `w` stored as `[out x in]`.
    pub fn linear(&self, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (out_dim, in_dim) = w.as_matrix("linear")?;
        if self.cols() != in_dim {
            return Err(Error::dim(
                "linear",
                format!("input {:?} vs weight [{out_dim}x{in_dim}]", self.shape),
            ));
        }
        if let Some(b) = bias {
            if b.numel() != out_dim {
                return Err(Error::dim("linear", format!("bias {:?} vs out {out_dim}", b.shape)));
            }
        }
        let n = self.rows();
        let mut out = vec![0.0; n * out_dim];
        for i in 0..n {
            let x = self.row(i);
            let orow = &mut out[i * out_dim..(i + 1) * out_dim];
            for (o, slot) in orow.iter_mut().enumerate() {
                let d = dot(x, &w.data[o * in_dim..(o + 1) * in_dim]);
                *slot = match bias {
                    Some(b) => d + b.data[o],
                    None => d,
                };
            }
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = out_dim;
        Tensor::new(shape, out)?.ensure_finite("linear")
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
        .ensure_finite(op)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Row-wise `x - logsumexp(x)` over the last axis.
    pub fn log_softmax(&self) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(c) {
            let lse = logsumexp(row);
            data.extend(row.iter().map(|&v| v - lse));
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Outer sum over rows: row `i * b.rows() + j` of the result is `a[i] + b[j]`.
    pub fn outer_add(&self, b: &Tensor) -> Result<Tensor> {
        let (m, n) = self.as_matrix("outer_add")?;
        let (k, n2) = b.as_matrix("outer_add")?;
        if n != n2 {
            return Err(Error::dim("outer_add", format!("[{m}x{n}] (+) [{k}x{n2}]")));
        }
        let mut data = Vec::with_capacity(m * k * n);
        for i in 0..m {
            let ar = self.row(i);
            for j in 0..k {
                data.extend(ar.iter().zip(b.row(j)).map(|(x, y)| x + y));
            }
        }
        Tensor::matrix(m * k, n, data)?.ensure_finite("outer_add")
    }

    pub fn concat_cols(&self, b: &Tensor) -> Result<Tensor> {
        let (m, n1) = self.as_matrix("concat_cols")?;
        let (m2, n2) = b.as_matrix("concat_cols")?;
        if m != m2 {
            return Err(Error::dim("concat_cols", format!("{m} rows vs {m2} rows")));
        }
        let mut data = Vec::with_capacity(m * (n1 + n2));
        for i in 0..m {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(b.row(i));
        }
        Tensor::matrix(m, n1 + n2, data)
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = self.as_matrix("slice_rows")?;
        if len == 0 || start + len > m {
            return Err(Error::dim("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        Tensor::matrix(len, n, self.data[start * n..(start + len) * n].to_vec())
    }

    pub fn stack_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("stack_rows"))?;
        let n = first.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.cols() != n {
                return Err(Error::dim("stack_rows", format!("{} cols vs {n}", p.cols())));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Tensor::matrix(rows, n, data)
    }

    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let (m, n) = self.as_matrix("gather_rows")?;
        if ids.is_empty() {
            return Err(Error::Empty("gather_rows"));
        }
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= m {
                return Err(Error::dim("gather_rows", format!("row {id} of {m}")));
            }
            data.extend_from_slice(self.row(id));
        }
        Tensor::matrix(ids.len(), n, data)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(sum(exp(xs)))`, max-shifted; `-inf` when every entry is `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Two-term logsumexp used on the lattice hot path.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four interleaved accumulators. Fixed reduction order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_selector() {
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap(), m);

        let sel = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let col = Tensor::matrix(2, 1, vec![0.0, 5.0]).unwrap();
        assert_eq!(sel.matmul(&col).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::matrix(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), naive_matmul(&a, &b).as_slice());
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn relu_sign_cases() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(&[2, 3], -0.5);
        assert!(neg.relu().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_softmax_cases() {
        let u = Tensor::vector(vec![0.0, 0.0]).unwrap().log_softmax();
        let ln2 = std::f64::consts::LN_2;
        assert!((u.data()[0] + ln2).abs() < 1e-15 && (u.data()[1] + ln2).abs() < 1e-15);

        let big = Tensor::vector(vec![1000.0, 0.0]).unwrap().log_softmax();
        assert!(big.data()[0].abs() < 1e-12);
        assert!((big.data()[1] + 1000.0).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = Tensor::vector((0..5).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let s: f64 = r.log_softmax().data().iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_cases() {
        let ln2 = std::f64::consts::LN_2;
        assert!((logsumexp(&[0.0, 0.0]) - ln2).abs() < 1e-15);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, -3.5]), -3.5);
        assert_eq!(logsumexp(&[-1000.0, -1000.0]), -1000.0 + ln2);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(log_add(f64::NEG_INFINITY, -2.0), -2.0);
        assert!((log_add(-1000.0, -1000.0) - (-1000.0 + ln2)).abs() < 1e-12);
    }

    #[test]
    fn outer_add_layout() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(3, 2, vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]).unwrap();
        let o = a.outer_add(&b).unwrap();
        assert_eq!(o.shape(), &[6, 2]);
        assert_eq!(o.row(4), &[33.0, 44.0]);
    }

    #[test]
    fn linear_rows_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::matrix(4, 7, (0..28).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::matrix(3, 7, (0..21).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
        let full = x.linear(&w, Some(&b)).unwrap();
        for i in 0..4 {
            let one = x.slice_rows(i, 1).unwrap().linear(&w, Some(&b)).unwrap();
            assert_eq!(one.data(), full.row(i));
        }
    }

    #[test]
    fn non_finite_is_an_error() {
        let a = Tensor::vector(vec![f64::MAX]).unwrap();
        assert!(matches!(a.add(&a), Err(Error::NonFinite(_))));
    }
}
