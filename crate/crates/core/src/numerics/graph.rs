//! The primitive operation set, abstracted over whether gradients are
//! recorded.
//!
//! Model code (MLPs, the coupled flow, losses) is written once against
//! [`Graph`]. [`Eval`] runs it eagerly on plain tensors; [`Tape`](super::Tape)
//! runs the same kernels and records them for reverse-mode differentiation,
//! so both paths produce bit-identical forward values.

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

pub trait Graph {
    type Value: Clone;

    /// A value that never receives a gradient.
    fn constant(&mut self, t: Tensor) -> Self::Value;
    /// A leaf whose gradient is reported by `backward`.
    fn param(&mut self, t: &Tensor) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn affine(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Elementwise minimum; ties route the gradient to `a`.
    fn minimum(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, c: f64) -> Self::Value;
    fn offset(&mut self, x: &Self::Value, c: f64) -> Self::Value;
    fn tanh(&mut self, x: &Self::Value) -> Self::Value;
    fn softplus(&mut self, x: &Self::Value) -> Self::Value;
    fn mish(&mut self, x: &Self::Value) -> Self::Value;
    fn exp(&mut self, x: &Self::Value) -> Self::Value;
    /// Natural log; non-positive entries are an error.
    fn log(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn square(&mut self, x: &Self::Value) -> Self::Value;
    /// Clamp into `[lo, hi]`; zero gradient outside the interval.
    fn clamp(&mut self, x: &Self::Value, lo: f64, hi: f64) -> Self::Value;
    /// Sum of all entries as a `1×1` value.
    fn sum(&mut self, x: &Self::Value) -> Self::Value;
    fn mean(&mut self, x: &Self::Value) -> Result<Self::Value>;
    /// `n×m → n×1`.
    fn row_sum(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn concat(&mut self, parts: &[&Self::Value]) -> Result<Self::Value>;
    fn slice(&mut self, x: &Self::Value, start: usize, end: usize) -> Result<Self::Value>;
    /// Broadcast a `1×m` row to `n×m`.
    fn repeat_rows(&mut self, x: &Self::Value, n: usize) -> Result<Self::Value>;
}

/// Eager evaluation without gradient bookkeeping.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Graph for Eval {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn affine(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::affine(x, w, b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::add(a, b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::sub(a, b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::mul(a, b)
    }

    fn minimum(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::minimum(a, b)
    }

    fn scale(&mut self, x: &Tensor, c: f64) -> Tensor {
        x.map(|v| v * c)
    }

    fn offset(&mut self, x: &Tensor, c: f64) -> Tensor {
        x.map(|v| v + c)
    }

    fn tanh(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::tanh)
    }

    fn softplus(&mut self, x: &Tensor) -> Tensor {
        x.map(tensor::softplus)
    }

    fn mish(&mut self, x: &Tensor) -> Tensor {
        x.map(tensor::mish)
    }

    fn exp(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::exp)
    }

    fn log(&mut self, x: &Tensor) -> Result<Tensor> {
        checked_log(x)
    }

    fn square(&mut self, x: &Tensor) -> Tensor {
        x.map(|v| v * v)
    }

    fn clamp(&mut self, x: &Tensor, lo: f64, hi: f64) -> Tensor {
        x.map(|v| v.clamp(lo, hi))
    }

    fn sum(&mut self, x: &Tensor) -> Tensor {
        Tensor::scalar(tensor::sum_all(x))
    }

    fn mean(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(tensor::mean_all(x)?))
    }

    fn row_sum(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::row_sum(x)
    }

    fn concat(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        tensor::concat_cols(parts)
    }

    fn slice(&mut self, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        tensor::slice_cols(x, start, end)
    }

    fn repeat_rows(&mut self, x: &Tensor, n: usize) -> Result<Tensor> {
        tensor::repeat_rows(x, n)
    }
}

pub(crate) fn checked_log(x: &Tensor) -> Result<Tensor> {
    if let Some(bad) = x.data().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Contract(format!("log of non-positive value {bad}")));
    }
    Ok(x.map(f64::ln))
}
