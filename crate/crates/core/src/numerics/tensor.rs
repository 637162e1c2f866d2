//! Dense row-major `f64` tensors and the forward kernels shared by the
//! eager evaluator and the gradient tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![value] }
    }

    /// Build a matrix from nested rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Tensor::from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor { shape: vec![rows.len(), cols], data })
    }

    /// Single row `1 × n`.
    pub fn row(values: &[f64]) -> Self {
        Tensor { shape: vec![1, values.len()], data: values.to_vec() }
    }

    /// Single column `n × 1`.
    pub fn column(values: &[f64]) -> Self {
        Tensor { shape: vec![values.len(), 1], data: values.to_vec() }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of a 2-D tensor. Panics on other ranks.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on rank-{} tensor", self.shape.len());
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on rank-{} tensor", self.shape.len());
        self.shape[1]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Select rows by index from a 2-D tensor.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Tensor { shape: vec![idx.len(), c], data }
    }

    pub(crate) fn check_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got shape {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }
}

// Kernels. Every reduction runs in a fixed sequential order so results do
// not depend on how callers batch their work.

/// `a (n×k) · b (k×m)`.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape[0], a.shape[1]);
    let m = b.shape[1];
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { shape: vec![n, m], data: out }
}

/// Dot product with four independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `a (n×k) · bᵀ` where `b` is `m×k`.
pub(crate) fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape[0], a.shape[1]);
    let m = b.shape[0];
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * m + j] = dot(arow, brow);
        }
    }
    Tensor { shape: vec![n, m], data: out }
}

/// `aᵀ · b` where `a` is `n×k` and `b` is `n×m`.
pub(crate) fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape[0], a.shape[1]);
    let m = b.shape[1];
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let brow = &b.data[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { shape: vec![k, m], data: out }
}

pub(crate) fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, i) = x.check_2d("affine")?;
    let (wi, o) = w.check_2d("affine")?;
    if wi != i {
        return Err(Error::shape("affine", format!("input has {i} columns, weight has {wi} rows")));
    }
    if b.len() != o {
        return Err(Error::shape("affine", format!("bias has {} entries, weight has {o} columns", b.len())));
    }
    let mut out = matmul(x, w);
    for r in 0..n {
        for (v, bv) in out.data[r * o..(r + 1) * o].iter_mut().zip(&b.data) {
            *v += bv;
        }
    }
    Ok(out)
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same(b, "add")?;
    Ok(a.zip_map(b, |x, y| x + y))
}

pub(crate) fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same(b, "sub")?;
    Ok(a.zip_map(b, |x, y| x - y))
}

pub(crate) fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same(b, "mul")?;
    Ok(a.zip_map(b, |x, y| x * y))
}

pub(crate) fn minimum(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same(b, "minimum")?;
    Ok(a.zip_map(b, |x, y| if y < x { y } else { x }))
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh(softplus(x))` from a single exponential:
/// with `e = exp(x)`, `tanh(ln(1 + e)) = e(e + 2) / (e(e + 2) + 2)`.
fn tanh_softplus(x: f64) -> f64 {
    if x > 20.0 {
        return 1.0;
    }
    let e = x.exp();
    let n = e * (e + 2.0);
    n / (n + 2.0)
}

/// `x · tanh(softplus(x))`.
pub fn mish(x: f64) -> f64 {
    x * tanh_softplus(x)
}

pub(crate) fn mish_grad(x: f64) -> f64 {
    if x > 20.0 {
        return 1.0;
    }
    let e = x.exp();
    let n = e * (e + 2.0);
    let t = n / (n + 2.0);
    t + x * (1.0 - t * t) * (e / (1.0 + e))
}

pub(crate) fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let Some(first) = parts.first() else {
        return Err(Error::shape("concat", "no inputs"));
    };
    let (n, _) = first.check_2d("concat")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (pn, pc) = p.check_2d("concat")?;
        if pn != n {
            return Err(Error::shape("concat", format!("row counts differ: {n} vs {pn}")));
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(n * total);
    for r in 0..n {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
        }
    }
    Ok(Tensor { shape: vec![n, total], data })
}

pub(crate) fn slice_cols(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (n, c) = x.check_2d("slice")?;
    if start > end || end > c {
        return Err(Error::shape("slice", format!("columns {start}..{end} out of 0..{c}")));
    }
    let w = end - start;
    let mut data = Vec::with_capacity(n * w);
    for r in 0..n {
        data.extend_from_slice(&x.data[r * c + start..r * c + end]);
    }
    Ok(Tensor { shape: vec![n, w], data })
}

pub(crate) fn repeat_rows(x: &Tensor, n: usize) -> Result<Tensor> {
    let (r, c) = x.check_2d("repeat_rows")?;
    if r != 1 {
        return Err(Error::shape("repeat_rows", format!("expected one row, got {r}")));
    }
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        data.extend_from_slice(&x.data);
    }
    Ok(Tensor { shape: vec![n, c], data })
}

pub(crate) fn row_sum(x: &Tensor) -> Result<Tensor> {
    let (n, c) = x.check_2d("row_sum")?;
    let data = (0..n).map(|r| x.data[r * c..(r + 1) * c].iter().sum()).collect();
    Ok(Tensor { shape: vec![n, 1], data })
}

pub(crate) fn sum_all(x: &Tensor) -> f64 {
    x.data.iter().sum()
}

pub(crate) fn mean_all(x: &Tensor) -> Result<f64> {
    if x.data.is_empty() {
        return Err(Error::Contract("mean of an empty tensor".into()));
    }
    Ok(sum_all(x) / x.data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_ok());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor::from_rows(&[[1.0, 0.5], [0.0, -1.0], [2.0, 1.0]]).unwrap();
        let ab = matmul(&a, &b);
        assert_eq!(ab.data(), &[7.0, 1.5, 16.0, 3.0]);
        let bt = Tensor::from_rows(&[[1.0, 0.0, 2.0], [0.5, -1.0, 1.0]]).unwrap();
        assert_eq!(matmul_bt(&a, &bt), ab);
        let at = Tensor::from_rows(&[[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]).unwrap();
        assert_eq!(matmul_at(&at, &b), ab);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
    }
}
