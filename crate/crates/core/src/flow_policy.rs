//! The coupled-flow policy over the doubled action space.
//!
//! Sampling starts from two independent standard normal vectors `(x, y)` and
//! applies `T` steps at times `t_k = k/T`. Each step is two shear updates
//! followed by a mixing pair:
//!
//! ```text
//! x~ = x + v(y, t) dt        y~ = y + v(x~, t) dt
//! x' = p x~ + (1-p) y~       y' = p y~ + (1-p) x'
//! ```
//!
//! Shears have unit Jacobian determinant and each mixing assignment scales
//! `d` coordinates by `p`, so the whole map has `log|det| = 2 d T ln p`
//! regardless of the network, the state, or the input point.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_standard_normal, BoundMlp, Eval, Graph, Mlp, Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Number of flow steps `T`.
    pub steps: usize,
    /// Mixing coefficient `p` in `(0, 1]`.
    pub mixing: f64,
    pub action_dim: usize,
    pub state_dim: usize,
    /// Weight on `x` when mapping a dummy action to an environment action.
    pub interpolation_alpha: f64,
}

impl FlowConfig {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        FlowConfig { steps: 5, mixing: 0.9, action_dim, state_dim, interpolation_alpha: 0.5 }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("flow steps must be positive".into()));
        }
        if !(self.mixing > 0.0 && self.mixing <= 1.0) {
            return Err(Error::Config(format!("mixing p must lie in (0, 1], got {}", self.mixing)));
        }
        if self.action_dim == 0 || self.state_dim == 0 {
            return Err(Error::Config("state and action dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.interpolation_alpha) {
            return Err(Error::Config(format!(
                "interpolation alpha must lie in [0, 1], got {}",
                self.interpolation_alpha
            )));
        }
        Ok(())
    }

    /// `log|det ∂ã/∂z| = 2 d T ln p`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.action_dim as f64 * self.steps as f64 * self.mixing.ln()
    }

    /// Differential entropy of the dummy-action distribution, the same for
    /// every state and parameter value.
    pub fn entropy(&self) -> f64 {
        self.action_dim as f64 * (2.0 * PI * E).ln() + self.log_det()
    }
}

/// Layer sizes for the velocity field and its time-embedding projector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetArch {
    pub embed_dim: usize,
    /// Hidden and output widths of the time-embedding MLP.
    pub time_layers: Vec<usize>,
    pub velocity_hidden: Vec<usize>,
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch { embed_dim: 32, time_layers: vec![32, 16], velocity_hidden: vec![64, 64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DummyAction {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl DummyAction {
    pub fn env_action(&self, alpha: f64) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePair {
    pub zx: Vec<f64>,
    pub zy: Vec<f64>,
}

/// Sinusoidal embedding: component `2i` is `sin(t / 10000^(2i/dim))`,
/// component `2i+1` the matching cosine.
pub fn time_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::Config(format!("time embedding dimension must be even and >= 2, got {dim}")));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / dim as f64);
        out.push((t / freq).sin());
        out.push((t / freq).cos());
    }
    Ok(out)
}

/// Parameters of `v_θ(state, partial, t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityNet {
    pub embed_dim: usize,
    pub time_mlp: Mlp,
    pub velocity_mlp: Mlp,
}

impl VelocityNet {
    pub fn new(cfg: &FlowConfig, arch: &NetArch, rng: &mut Rng) -> Result<Self> {
        if arch.embed_dim < 2 || arch.embed_dim % 2 != 0 {
            return Err(Error::Config(format!("embed_dim must be even and >= 2, got {}", arch.embed_dim)));
        }
        if arch.time_layers.is_empty() {
            return Err(Error::Config("time embedding MLP needs at least one layer".into()));
        }
        let mut time_sizes = vec![arch.embed_dim];
        time_sizes.extend(&arch.time_layers);
        let time_mlp = Mlp::new(&time_sizes, rng)?;
        let mut vel_sizes = vec![cfg.state_dim + cfg.action_dim + time_mlp.out_dim()];
        vel_sizes.extend(&arch.velocity_hidden);
        vel_sizes.push(cfg.action_dim);
        let velocity_mlp = Mlp::new(&vel_sizes, rng)?;
        Ok(VelocityNet { embed_dim: arch.embed_dim, time_mlp, velocity_mlp })
    }

    /// Zero the output layer so that `v ≡ bias` everywhere.
    pub fn set_constant_velocity(&mut self, value: &[f64]) -> Result<()> {
        let last = self.velocity_mlp.layers.last_mut().expect("non-empty");
        if value.len() != last.out_dim() {
            return Err(Error::shape("set_constant_velocity", format!("{} values for {} outputs", value.len(), last.out_dim())));
        }
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().copy_from_slice(value);
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.time_mlp.num_params() + self.velocity_mlp.num_params()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.time_mlp.tensors();
        t.extend(self.velocity_mlp.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.time_mlp.tensors_mut();
        t.extend(self.velocity_mlp.tensors_mut());
        t
    }
}

/// Policy parameters bound to a graph, with the per-step time features
/// already projected.
pub struct BoundPolicy<V> {
    time_mlp: BoundMlp<V>,
    velocity: BoundMlp<V>,
    step_features: Vec<V>,
}

impl<V: Clone> BoundPolicy<V> {
    /// Handles in the order of [`VelocityNet::tensors`].
    pub fn handles(&self) -> Vec<V> {
        let mut h = self.time_mlp.handles();
        h.extend(self.velocity.handles());
        h
    }
}

/// Output of [`FlowPolicy::act`] for a batch of `n` states.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    /// `n × d`.
    pub env_actions: Tensor,
    /// `n × d` halves of the dummy actions.
    pub x: Tensor,
    pub y: Tensor,
    pub log_probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowPolicy {
    pub cfg: FlowConfig,
    pub net: VelocityNet,
}

impl FlowPolicy {
    pub fn new(cfg: FlowConfig, arch: &NetArch, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let net = VelocityNet::new(&cfg, arch, rng)?;
        Ok(FlowPolicy { cfg, net })
    }

    /// Time value fed to the sinusoidal embedding: the flow time rescaled to
    /// the integer step grid `0..T`.
    fn embed_input(&self, t: f64) -> f64 {
        t * self.cfg.steps as f64
    }

    fn time_feature<G: Graph>(&self, g: &mut G, mlp: &BoundMlp<G::Value>, t: f64) -> Result<G::Value> {
        let e = time_embed(self.embed_input(t), self.net.embed_dim)?;
        let e = g.constant(Tensor::row(&e));
        mlp.forward(g, &e)
    }

    pub fn bind<G: Graph>(&self, g: &mut G) -> Result<BoundPolicy<G::Value>> {
        let time_mlp = self.net.time_mlp.bind(g);
        let velocity = self.net.velocity_mlp.bind(g);
        let dt = self.cfg.dt();
        let step_features = (0..self.cfg.steps)
            .map(|k| self.time_feature(g, &time_mlp, k as f64 * dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundPolicy { time_mlp, velocity, step_features })
    }

    fn velocity_with<G: Graph>(
        &self,
        g: &mut G,
        bound: &BoundPolicy<G::Value>,
        state: &G::Value,
        partial: &G::Value,
        feature: &G::Value,
    ) -> Result<G::Value> {
        let n = g.value(state).rows();
        let tf = g.repeat_rows(feature, n)?;
        let input = g.concat(&[state, partial, &tf])?;
        bound.velocity.forward(g, &input)
    }

    /// `v_θ` for a batch: `state` is `n × state_dim`, `partial` is `n × d`.
    pub fn velocity_graph<G: Graph>(
        &self,
        g: &mut G,
        bound: &BoundPolicy<G::Value>,
        state: &G::Value,
        partial: &G::Value,
        t: f64,
    ) -> Result<G::Value> {
        let feature = self.time_feature(g, &bound.time_mlp, t)?;
        self.velocity_with(g, bound, state, partial, &feature)
    }

    /// `v_θ(state, partial, t)` for a single input.
    pub fn velocity(&self, state: &[f64], partial: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_state(state.len())?;
        self.check_action(partial.len())?;
        let mut g = Eval;
        let bound = self.bind(&mut g)?;
        let out = self.velocity_graph(&mut g, &bound, &Tensor::row(state), &Tensor::row(partial), t)?;
        Ok(out.into_data())
    }

    /// Noise `(zx, zy)` to dummy action `(x₁, y₁)`, batched over rows.
    pub fn reverse_sample_graph<G: Graph>(
        &self,
        g: &mut G,
        bound: &BoundPolicy<G::Value>,
        state: &G::Value,
        zx: &G::Value,
        zy: &G::Value,
    ) -> Result<(G::Value, G::Value)> {
        let (dt, p) = (self.cfg.dt(), self.cfg.mixing);
        let mut x = zx.clone();
        let mut y = zy.clone();
        for k in 0..self.cfg.steps {
            let feat = &bound.step_features[k];
            let vy = self.velocity_with(g, bound, state, &y, feat)?;
            let vy = g.scale(&vy, dt);
            let x_shear = g.add(&x, &vy)?;
            let vx = self.velocity_with(g, bound, state, &x_shear, feat)?;
            let vx = g.scale(&vx, dt);
            let y_shear = g.add(&y, &vx)?;

            let a = g.scale(&x_shear, p);
            let b = g.scale(&y_shear, 1.0 - p);
            x = g.add(&a, &b)?;
            let a = g.scale(&y_shear, p);
            let b = g.scale(&x, 1.0 - p);
            y = g.add(&a, &b)?;

            if !g.value(&x).is_finite() || !g.value(&y).is_finite() {
                return Err(Error::non_finite(format!("reverse_sample step {k}")));
            }
        }
        Ok((x, y))
    }

    /// Dummy action `(x₁, y₁)` back to noise, undoing each step in reverse.
    pub fn forward_invert_graph<G: Graph>(
        &self,
        g: &mut G,
        bound: &BoundPolicy<G::Value>,
        state: &G::Value,
        x1: &G::Value,
        y1: &G::Value,
    ) -> Result<(G::Value, G::Value)> {
        let (dt, p) = (self.cfg.dt(), self.cfg.mixing);
        if !(p > 0.0) {
            return Err(Error::Config(format!("mixing p must be positive to invert, got {p}")));
        }
        let inv_p = 1.0 / p;
        let mut x = x1.clone();
        let mut y = y1.clone();
        for k in (0..self.cfg.steps).rev() {
            let feat = &bound.step_features[k];
            let a = g.scale(&x, 1.0 - p);
            let num = g.sub(&y, &a)?;
            let y_shear = g.scale(&num, inv_p);
            let a = g.scale(&y_shear, 1.0 - p);
            let num = g.sub(&x, &a)?;
            let x_shear = g.scale(&num, inv_p);

            let vx = self.velocity_with(g, bound, state, &x_shear, feat)?;
            let vx = g.scale(&vx, dt);
            y = g.sub(&y_shear, &vx)?;
            let vy = self.velocity_with(g, bound, state, &y, feat)?;
            let vy = g.scale(&vy, dt);
            x = g.sub(&x_shear, &vy)?;

            if !g.value(&x).is_finite() || !g.value(&y).is_finite() {
                return Err(Error::non_finite(format!("forward_invert step {k}")));
            }
        }
        Ok((x, y))
    }

    /// `n × 1` log-densities of dummy actions.
    pub fn log_prob_graph<G: Graph>(
        &self,
        g: &mut G,
        bound: &BoundPolicy<G::Value>,
        state: &G::Value,
        x1: &G::Value,
        y1: &G::Value,
    ) -> Result<G::Value> {
        let (zx, zy) = self.forward_invert_graph(g, bound, state, x1, y1)?;
        let z = g.concat(&[&zx, &zy])?;
        let sq = g.square(&z);
        let ss = g.row_sum(&sq)?;
        let half = g.scale(&ss, -0.5);
        let d = self.cfg.action_dim as f64;
        Ok(g.offset(&half, -d * (2.0 * PI).ln() - self.cfg.log_det()))
    }

    pub fn reverse_sample(&self, state: &[f64], noise: &NoisePair) -> Result<DummyAction> {
        self.check_state(state.len())?;
        self.check_action(noise.zx.len())?;
        self.check_action(noise.zy.len())?;
        let (x, y) = self.sample_batch(&Tensor::row(state), &Tensor::row(&noise.zx), &Tensor::row(&noise.zy))?;
        Ok(DummyAction { x: x.into_data(), y: y.into_data() })
    }

    pub fn forward_invert(&self, state: &[f64], action: &DummyAction) -> Result<NoisePair> {
        self.check_state(state.len())?;
        self.check_action(action.x.len())?;
        self.check_action(action.y.len())?;
        let (zx, zy) = self.invert_batch(&Tensor::row(state), &Tensor::row(&action.x), &Tensor::row(&action.y))?;
        Ok(NoisePair { zx: zx.into_data(), zy: zy.into_data() })
    }

    pub fn log_prob(&self, state: &[f64], action: &DummyAction) -> Result<f64> {
        self.check_state(state.len())?;
        self.check_action(action.x.len())?;
        self.check_action(action.y.len())?;
        let lp = self.log_prob_batch(&Tensor::row(state), &Tensor::row(&action.x), &Tensor::row(&action.y))?;
        Ok(lp[0])
    }

    pub fn sample_batch(&self, states: &Tensor, zx: &Tensor, zy: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_batch(states, &[zx, zy])?;
        let mut g = Eval;
        let bound = self.bind(&mut g)?;
        self.reverse_sample_graph(&mut g, &bound, states, zx, zy)
    }

    pub fn invert_batch(&self, states: &Tensor, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_batch(states, &[x, y])?;
        let mut g = Eval;
        let bound = self.bind(&mut g)?;
        self.forward_invert_graph(&mut g, &bound, states, x, y)
    }

    pub fn log_prob_batch(&self, states: &Tensor, x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
        self.check_batch(states, &[x, y])?;
        let mut g = Eval;
        let bound = self.bind(&mut g)?;
        Ok(self.log_prob_graph(&mut g, &bound, states, x, y)?.into_data())
    }

    /// Sample dummy actions for every state row, map them to environment
    /// actions and score them.
    pub fn act(&self, states: &Tensor, rng: &mut Rng) -> Result<Action> {
        let n = states.check_2d("act")?.0;
        let d = self.cfg.action_dim;
        let zx = sample_standard_normal(rng, &[n, d]);
        let zy = sample_standard_normal(rng, &[n, d]);
        let (x, y) = self.sample_batch(states, &zx, &zy)?;
        let log_probs = self.log_prob_batch(states, &x, &y)?;
        let env_actions = interpolate(&x, &y, self.cfg.interpolation_alpha);
        Ok(Action { env_actions, x, y, log_probs })
    }

    /// Sample without scoring; cheaper when log-probabilities are not needed.
    pub fn sample_env_actions(&self, states: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let n = states.check_2d("sample")?.0;
        let d = self.cfg.action_dim;
        let zx = sample_standard_normal(rng, &[n, d]);
        let zy = sample_standard_normal(rng, &[n, d]);
        let (x, y) = self.sample_batch(states, &zx, &zy)?;
        Ok(interpolate(&x, &y, self.cfg.interpolation_alpha))
    }

    fn check_state(&self, len: usize) -> Result<()> {
        if len != self.cfg.state_dim {
            return Err(Error::shape("flow policy", format!("state has {len} entries, expected {}", self.cfg.state_dim)));
        }
        Ok(())
    }

    fn check_action(&self, len: usize) -> Result<()> {
        if len != self.cfg.action_dim {
            return Err(Error::shape("flow policy", format!("action half has {len} entries, expected {}", self.cfg.action_dim)));
        }
        Ok(())
    }

    fn check_batch(&self, states: &Tensor, halves: &[&Tensor]) -> Result<()> {
        let (n, s) = states.check_2d("flow policy")?;
        self.check_state(s)?;
        for h in halves {
            let (hn, hd) = h.check_2d("flow policy")?;
            if hn != n {
                return Err(Error::shape("flow policy", format!("{hn} action rows for {n} states")));
            }
            self.check_action(hd)?;
        }
        Ok(())
    }
}

/// `α·x + (1−α)·y` row by row.
pub fn interpolate(x: &Tensor, y: &Tensor, alpha: f64) -> Tensor {
    x.zip_map(y, |a, b| alpha * a + (1.0 - alpha) * b)
}
