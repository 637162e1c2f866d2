//! Dense tensors, reverse-mode differentiation, small MLPs and the optimizer.

pub mod adam;
mod graph;
pub mod mlp;
pub mod rng;
mod tape;
mod tensor;

pub use adam::Adam;
pub use graph::{Eval, Graph};
pub use mlp::{BoundMlp, Linear, Mlp};
pub use rng::{sample_standard_normal, seeded, Rng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{mish, sigmoid, softplus, Tensor};

/// `affine` evaluated eagerly.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> crate::Result<Tensor> {
    tensor::affine(input, weight, bias)
}
