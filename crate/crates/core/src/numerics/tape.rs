//! Reverse-mode differentiation over a linear tape of primitive operations.

use super::graph::{checked_log, Graph};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Softplus(Var),
    Mish(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    RepeatRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Operations are appended in evaluation order, so replaying indices in
/// reverse is a valid reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Affine(a, b, c) => self.ng(*a) || self.ng(*b) || self.ng(*c),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Min(a, b) => self.ng(*a) || self.ng(*b),
            Op::Concat(parts) => parts.iter().any(|p| self.ng(*p)),
            Op::Scale(x, _)
            | Op::Offset(x)
            | Op::Tanh(x)
            | Op::Softplus(x)
            | Op::Mish(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Square(x)
            | Op::Clamp(x, _, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::RowSum(x)
            | Op::Slice(x, _, _)
            | Op::RepeatRows(x) => self.ng(*x),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Replay the tape backward from a scalar `loss` seeded with adjoint 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let seed = self.val(loss);
        if seed.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(seed.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            let acc = |v: Var, delta: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.ng(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => {
                        for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                            *e += d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Affine(x, w, b) => {
                    if self.ng(*x) {
                        acc(*x, tensor::matmul_bt(&g, self.val(*w)), &mut grads);
                    }
                    if self.ng(*w) {
                        acc(*w, tensor::matmul_at(self.val(*x), &g), &mut grads);
                    }
                    if self.ng(*b) {
                        let (n, o) = (g.rows(), g.cols());
                        let mut db = vec![0.0; o];
                        for r in 0..n {
                            for (d, v) in db.iter_mut().zip(&g.data()[r * o..(r + 1) * o]) {
                                *d += v;
                            }
                        }
                        let shape = self.val(*b).shape().to_vec();
                        acc(*b, Tensor::new(shape, db)?, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.clone(), &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.map(|v| -v), &mut grads);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(self.val(*b), |gv, bv| gv * bv), &mut grads);
                    acc(*b, g.zip_map(self.val(*a), |gv, av| gv * av), &mut grads);
                }
                Op::Min(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let mask_a: Vec<bool> = av.data().iter().zip(bv.data()).map(|(x, y)| !(y < x)).collect();
                    let mut ga = g.clone();
                    let mut gb = g.clone();
                    for ((ga, gb), &m) in ga.data_mut().iter_mut().zip(gb.data_mut()).zip(&mask_a) {
                        if m {
                            *gb = 0.0;
                        } else {
                            *ga = 0.0;
                        }
                    }
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::Scale(x, c) => acc(*x, g.map(|v| v * c), &mut grads),
                Op::Offset(x) => acc(*x, g.clone(), &mut grads),
                Op::Tanh(x) => {
                    acc(*x, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y)), &mut grads);
                }
                Op::Softplus(x) => {
                    acc(*x, g.zip_map(self.val(*x), |gv, xv| gv * tensor::sigmoid(xv)), &mut grads);
                }
                Op::Mish(x) => {
                    acc(*x, g.zip_map(self.val(*x), |gv, xv| gv * tensor::mish_grad(xv)), &mut grads);
                }
                Op::Exp(x) => acc(*x, g.zip_map(&node.value, |gv, y| gv * y), &mut grads),
                Op::Log(x) => acc(*x, g.zip_map(self.val(*x), |gv, xv| gv / xv), &mut grads),
                Op::Square(x) => {
                    acc(*x, g.zip_map(self.val(*x), |gv, xv| 2.0 * gv * xv), &mut grads);
                }
                Op::Clamp(x, lo, hi) => {
                    let gx = g.zip_map(self.val(*x), |gv, xv| if xv < *lo || xv > *hi { 0.0 } else { gv });
                    acc(*x, gx, &mut grads);
                }
                Op::Sum(x) => {
                    acc(*x, Tensor::full(self.val(*x).shape(), g.item()), &mut grads);
                }
                Op::Mean(x) => {
                    let xs = self.val(*x);
                    acc(*x, Tensor::full(xs.shape(), g.item() / xs.len() as f64), &mut grads);
                }
                Op::RowSum(x) => {
                    let xs = self.val(*x);
                    let (n, c) = (xs.rows(), xs.cols());
                    let mut data = Vec::with_capacity(n * c);
                    for r in 0..n {
                        data.extend(std::iter::repeat_n(g.data()[r], c));
                    }
                    acc(*x, Tensor::new(vec![n, c], data)?, &mut grads);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.val(*p).cols();
                        if self.ng(*p) {
                            acc(*p, tensor::slice_cols(&g, start, start + w)?, &mut grads);
                        }
                        start += w;
                    }
                }
                Op::Slice(x, start, end) => {
                    let xs = self.val(*x);
                    let (n, c) = (xs.rows(), xs.cols());
                    let w = end - start;
                    let mut gx = Tensor::zeros(&[n, c]);
                    for r in 0..n {
                        gx.data_mut()[r * c + start..r * c + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    acc(*x, gx, &mut grads);
                }
                Op::RepeatRows(x) => {
                    let c = g.cols();
                    let mut gx = vec![0.0; c];
                    for r in 0..g.rows() {
                        for (d, v) in gx.iter_mut().zip(g.row_slice(r)) {
                            *d += v;
                        }
                    }
                    acc(*x, Tensor::new(vec![1, c], gx)?, &mut grads);
                }
            }
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }
}

impl Graph for Tape {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn param(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node { value: t.clone(), op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.val(*v)
    }

    fn affine(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let out = tensor::affine(self.val(*x), self.val(*w), self.val(*b))?;
        Ok(self.push(out, Op::Affine(*x, *w, *b)))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = tensor::add(self.val(*a), self.val(*b))?;
        Ok(self.push(out, Op::Add(*a, *b)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = tensor::sub(self.val(*a), self.val(*b))?;
        Ok(self.push(out, Op::Sub(*a, *b)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = tensor::mul(self.val(*a), self.val(*b))?;
        Ok(self.push(out, Op::Mul(*a, *b)))
    }

    fn minimum(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = tensor::minimum(self.val(*a), self.val(*b))?;
        Ok(self.push(out, Op::Min(*a, *b)))
    }

    fn scale(&mut self, x: &Var, c: f64) -> Var {
        let out = self.val(*x).map(|v| v * c);
        self.push(out, Op::Scale(*x, c))
    }

    fn offset(&mut self, x: &Var, c: f64) -> Var {
        let out = self.val(*x).map(|v| v + c);
        self.push(out, Op::Offset(*x))
    }

    fn tanh(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(f64::tanh);
        self.push(out, Op::Tanh(*x))
    }

    fn softplus(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(tensor::softplus);
        self.push(out, Op::Softplus(*x))
    }

    fn mish(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(tensor::mish);
        self.push(out, Op::Mish(*x))
    }

    fn exp(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(f64::exp);
        self.push(out, Op::Exp(*x))
    }

    fn log(&mut self, x: &Var) -> Result<Var> {
        let out = checked_log(self.val(*x))?;
        Ok(self.push(out, Op::Log(*x)))
    }

    fn square(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(|v| v * v);
        self.push(out, Op::Square(*x))
    }

    fn clamp(&mut self, x: &Var, lo: f64, hi: f64) -> Var {
        let out = self.val(*x).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(*x, lo, hi))
    }

    fn sum(&mut self, x: &Var) -> Var {
        let out = Tensor::scalar(tensor::sum_all(self.val(*x)));
        self.push(out, Op::Sum(*x))
    }

    fn mean(&mut self, x: &Var) -> Result<Var> {
        let out = Tensor::scalar(tensor::mean_all(self.val(*x))?);
        Ok(self.push(out, Op::Mean(*x)))
    }

    fn row_sum(&mut self, x: &Var) -> Result<Var> {
        let out = tensor::row_sum(self.val(*x))?;
        Ok(self.push(out, Op::RowSum(*x)))
    }

    fn concat(&mut self, parts: &[&Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.val(**p)).collect();
        let out = tensor::concat_cols(&tensors)?;
        Ok(self.push(out, Op::Concat(parts.iter().map(|p| **p).collect())))
    }

    fn slice(&mut self, x: &Var, start: usize, end: usize) -> Result<Var> {
        let out = tensor::slice_cols(self.val(*x), start, end)?;
        Ok(self.push(out, Op::Slice(*x, start, end)))
    }

    fn repeat_rows(&mut self, x: &Var, n: usize) -> Result<Var> {
        let out = tensor::repeat_rows(self.val(*x), n)?;
        Ok(self.push(out, Op::RepeatRows(*x)))
    }
}
