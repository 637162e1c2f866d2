//! Fully connected networks with mish activations.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`.
    pub weight: Tensor,
    /// `1 × out`.
    pub bias: Tensor,
}

impl Linear {
    /// Weights uniform in `±1/√fan_in`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], data).expect("sized"),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// `Linear → mish → … → Linear`; the output layer has no activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Layer parameters placed on a graph for one forward pass.
pub struct BoundMlp<V> {
    layers: Vec<(V, V)>,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn bind<G: Graph>(&self, g: &mut G) -> BoundMlp<G::Value> {
        BoundMlp {
            layers: self.layers.iter().map(|l| (g.param(&l.weight), g.param(&l.bias))).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

impl<V: Clone> BoundMlp<V> {
    pub fn forward<G: Graph<Value = V>>(&self, g: &mut G, x: &V) -> Result<V> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = g.affine(&h, w, b)?;
            if i < last {
                h = g.mish(&h);
            }
        }
        Ok(h)
    }

    /// Parameter handles in the same order as [`Mlp::tensors`].
    pub fn handles(&self) -> Vec<V> {
        self.layers.iter().flat_map(|(w, b)| [w.clone(), b.clone()]).collect()
    }
}

/// Concatenate tensors into one flat vector.
pub fn flatten(tensors: &[&Tensor]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Inverse of [`flatten`] over tensors of the same shapes.
pub fn unflatten(tensors: &mut [&mut Tensor], flat: &[f64]) -> Result<()> {
    let total: usize = tensors.iter().map(|t| t.len()).sum();
    if total != flat.len() {
        return Err(Error::shape("unflatten", format!("expected {total} values, got {}", flat.len())));
    }
    let mut offset = 0;
    for t in tensors.iter_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(())
}
