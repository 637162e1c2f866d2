//! The outer training loop: collect, estimate advantages, then run several
//! epochs of minibatch updates under a KL-adaptive learning rate.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, PointMassConfig, VecEnv};
use crate::error::{Error, Result};
use crate::flow_policy::{BoundPolicy, FlowConfig, FlowPolicy, NetArch};
use crate::numerics::adam::clip_global_norm;
use crate::numerics::{sample_standard_normal, seeded, Adam, BoundMlp, Graph, Mlp, Rng, Tape, Tensor};
use crate::objectives::{
    compression_loss, entropy_loss, kl_estimate, ppo_clip_loss, total_policy_loss, value_loss, LossConfig, LossParts,
};
use crate::rollout::{collect_rollout, critic_values, minibatches, normalize_advantages, GaeConfig, RolloutBuffer};

/// Flow settings that do not depend on the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSettings {
    pub steps: usize,
    pub mixing_p: f64,
    pub interpolation_alpha: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings { steps: 5, mixing_p: 0.9, interpolation_alpha: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub n_envs: usize,
    pub steps_per_env: usize,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub kl_target: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub seed: u64,
    pub flow: FlowSettings,
    pub arch: NetArch,
    pub value_hidden: Vec<usize>,
    pub loss: LossConfig,
    pub gae: GaeConfig,
    pub env: EnvKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300,
            n_envs: 4,
            steps_per_env: 64,
            update_epochs: 5,
            minibatch_size: 64,
            learning_rate: 1e-3,
            kl_target: 0.01,
            lr_min: 1e-5,
            lr_max: 1e-2,
            max_grad_norm: 1.0,
            normalize_advantages: true,
            seed: 0,
            flow: FlowSettings::default(),
            arch: NetArch::default(),
            value_hidden: vec![64, 64],
            loss: LossConfig::default(),
            gae: GaeConfig::default(),
            env: EnvKind::PointMass(PointMassConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn flow_config(&self) -> FlowConfig {
        let spec = self.env.spec();
        FlowConfig {
            steps: self.flow.steps,
            mixing: self.flow.mixing_p,
            action_dim: spec.act_dim,
            state_dim: spec.obs_dim,
            interpolation_alpha: self.flow.interpolation_alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_envs", self.n_envs),
            ("steps_per_env", self.steps_per_env),
            ("minibatch_size", self.minibatch_size),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!("lr bounds must satisfy 0 < lr_min <= lr_max, got [{}, {}]", self.lr_min, self.lr_max)));
        }
        if !(self.learning_rate >= self.lr_min && self.learning_rate <= self.lr_max) {
            return Err(Error::Config(format!(
                "learning_rate {} outside [{}, {}]",
                self.learning_rate, self.lr_min, self.lr_max
            )));
        }
        if !(self.kl_target > 0.0) {
            return Err(Error::Config(format!("kl_target must be positive, got {}", self.kl_target)));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(format!("max_grad_norm must be positive, got {}", self.max_grad_norm)));
        }
        if self.value_hidden.contains(&0) {
            return Err(Error::Config("value_hidden layer sizes must be positive".into()));
        }
        if self.arch.embed_dim < 2 || self.arch.embed_dim % 2 == 1 {
            return Err(Error::Config(format!("arch.embed_dim must be even and at least 2, got {}", self.arch.embed_dim)));
        }
        if self.arch.time_layers.is_empty() || self.arch.time_layers.contains(&0) || self.arch.velocity_hidden.contains(&0) {
            return Err(Error::Config("arch.time_layers must be non-empty and all layer sizes positive".into()));
        }
        if self.flow.steps == 0 {
            return Err(Error::Config("flow.steps (flow steps T) must be at least 1".into()));
        }
        if !(self.flow.mixing_p > 0.0 && self.flow.mixing_p <= 1.0) {
            return Err(Error::Config(format!("flow.mixing_p (mixing p) must lie in (0, 1], got {}", self.flow.mixing_p)));
        }
        if !(0.0..=1.0).contains(&self.flow.interpolation_alpha) {
            return Err(Error::Config(format!(
                "flow.interpolation_alpha must lie in [0, 1], got {}",
                self.flow.interpolation_alpha
            )));
        }
        self.flow_config().validate()?;
        self.loss.validate()?;
        self.gae.validate()?;
        self.env.validate()
    }
}

/// Halve `lr` when `kl ≥ 2·target`, double it when `kl ≤ target/2`, then
/// clamp to `[lr_min, lr_max]`. A non-finite `kl` leaves `lr` unchanged.
pub fn adapt_lr(kl: f64, lr: f64, kl_target: f64, lr_min: f64, lr_max: f64) -> f64 {
    if !kl.is_finite() {
        return lr;
    }
    let next = if kl >= 2.0 * kl_target {
        lr / 2.0
    } else if kl <= kl_target / 2.0 {
        lr * 2.0
    } else {
        lr
    };
    next.clamp(lr_min, lr_max)
}

/// One row of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Episodes completed during this iteration's collection.
    pub episodes: usize,
    pub return_mean: Option<f64>,
    pub return_std: Option<f64>,
    /// KL after the last update epoch; absent when no epoch ran or the
    /// estimate was not finite.
    pub kl: Option<f64>,
    /// `−mean(old_logp)` over the rollout.
    pub entropy_estimate: f64,
    pub ppo_loss: Option<f64>,
    pub entropy_loss: Option<f64>,
    pub compression_loss: Option<f64>,
    pub value_loss: Option<f64>,
    /// Learning rate after this iteration's adaptation.
    pub lr: f64,
    /// `mean((x − y)²)` over the collected dummy actions.
    pub compression: f64,
    pub grad_norm: Option<f64>,
    /// Set when advantage normalization was skipped or a KL estimate was not
    /// finite.
    pub warning: bool,
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub policy: FlowPolicy,
    pub critic: Mlp,
    pub optimizer: Adam,
    pub lr: f64,
    pub iteration: usize,
    pub rng: Rng,
    pub env: VecEnv,
    pub history: Vec<IterationMetrics>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(cfg.seed);
        let policy = FlowPolicy::new(cfg.flow_config(), &cfg.arch, &mut rng)?;
        let obs_dim = cfg.env.spec().obs_dim;
        let mut sizes = vec![obs_dim];
        sizes.extend(&cfg.value_hidden);
        sizes.push(1);
        let critic = Mlp::new(&sizes, &mut rng)?;
        let mut env = VecEnv::new(cfg.env.clone(), cfg.n_envs, rng.next_u64())?;
        env.reset();
        let mut params = policy.net.tensors();
        params.extend(critic.tensors());
        let optimizer = Adam::new(&params);
        Ok(TrainState { policy, critic, optimizer, lr: cfg.learning_rate, iteration: 0, rng, env, history: Vec::new() })
    }

    fn param_count(&self) -> usize {
        self.policy.net.tensors().len() + self.critic.tensors().len()
    }
}

/// Tensors for one minibatch, all with the same number of rows.
#[derive(Clone, Debug)]
pub struct Minibatch {
    pub states: Tensor,
    pub x: Tensor,
    pub y: Tensor,
    pub old_logp: Tensor,
    pub advantages: Tensor,
    pub returns: Tensor,
    /// Fresh noise for the compression term.
    pub zx: Tensor,
    pub zy: Tensor,
}

impl Minibatch {
    pub fn gather(buffer: &RolloutBuffer, advantages: &[f64], idx: &[usize], rng: &mut Rng) -> Minibatch {
        let d = buffer.x.cols();
        Minibatch {
            states: buffer.states.gather_rows(idx),
            x: buffer.x.gather_rows(idx),
            y: buffer.y.gather_rows(idx),
            old_logp: Tensor::column(&buffer.old_logp).gather_rows(idx),
            advantages: Tensor::column(advantages).gather_rows(idx),
            returns: Tensor::column(&buffer.returns).gather_rows(idx),
            zx: sample_standard_normal(rng, &[idx.len(), d]),
            zy: sample_standard_normal(rng, &[idx.len(), d]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinibatchLoss<V> {
    pub parts: LossParts<V>,
    pub policy_total: V,
    pub value: V,
    /// `policy_total + value_coef·value`, the quantity differentiated.
    pub combined: V,
}

/// The full update objective for one minibatch on any graph.
///
/// The compression term pushes fresh noise through the sampler, since the
/// stored dummy actions do not depend on the current parameters.
pub fn minibatch_loss<G: Graph>(
    g: &mut G,
    policy: &FlowPolicy,
    bound: &BoundPolicy<G::Value>,
    critic: &BoundMlp<G::Value>,
    mb: &Minibatch,
    cfg: &LossConfig,
) -> Result<MinibatchLoss<G::Value>> {
    let states = g.constant(mb.states.clone());
    let x = g.constant(mb.x.clone());
    let y = g.constant(mb.y.clone());
    let old = g.constant(mb.old_logp.clone());
    let adv = g.constant(mb.advantages.clone());
    let ret = g.constant(mb.returns.clone());
    let zx = g.constant(mb.zx.clone());
    let zy = g.constant(mb.zy.clone());

    let new_logp = policy.log_prob_graph(g, bound, &states, &x, &y)?;
    let ppo = ppo_clip_loss(g, &new_logp, &old, &adv, cfg.clip)?;
    let entropy = entropy_loss(g, &new_logp, &old)?;
    let compression = if cfg.compression_coef > 0.0 {
        let (sx, sy) = policy.reverse_sample_graph(g, bound, &states, &zx, &zy)?;
        compression_loss(g, &sx, &sy)?
    } else {
        g.constant(Tensor::scalar(0.0))
    };
    let parts = LossParts { ppo, entropy, compression };
    let policy_total = total_policy_loss(g, &parts, cfg)?;
    let v_pred = critic.forward(g, &states)?;
    let value = value_loss(g, &v_pred, &ret)?;
    let scaled = g.scale(&value, cfg.value_coef);
    let combined = g.add(&policy_total, &scaled)?;
    Ok(MinibatchLoss { parts, policy_total, value, combined })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub kl: Option<f64>,
    pub ppo_loss: Option<f64>,
    pub entropy_loss: Option<f64>,
    pub compression_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub kl_warning: bool,
}

/// Run `cfg.update_epochs` epochs of minibatch steps on `buffer`, adapting
/// the learning rate from the full-buffer KL after each epoch.
pub fn update_epochs(state: &mut TrainState, buffer: &RolloutBuffer, advantages: &[f64], cfg: &TrainConfig) -> Result<UpdateStats> {
    if buffer.returns.len() != buffer.len() || advantages.len() != buffer.len() {
        return Err(Error::Contract("update_epochs needs advantages and returns for every sample".into()));
    }
    let mut stats = UpdateStats::default();
    if buffer.is_empty() {
        return Ok(stats);
    }
    let mut sums = [0.0; 5];
    let mut count = 0usize;
    for epoch in 0..cfg.update_epochs {
        for (b, idx) in minibatches(buffer.len(), cfg.minibatch_size, &mut state.rng)?.into_iter().enumerate() {
            let mb = Minibatch::gather(buffer, advantages, &idx, &mut state.rng);
            let mut tape = Tape::new();
            let bound = state.policy.bind(&mut tape)?;
            let critic = state.critic.bind(&mut tape);
            let loss = minibatch_loss(&mut tape, &state.policy, &bound, &critic, &mb, &cfg.loss)?;
            let parts = [
                tape.value(&loss.parts.ppo).item(),
                tape.value(&loss.parts.entropy).item(),
                tape.value(&loss.parts.compression).item(),
                tape.value(&loss.value).item(),
            ];
            let grads_of = tape.backward(loss.combined)?;
            let mut handles = bound.handles();
            handles.extend(critic.handles());
            let mut grads: Vec<Tensor> = handles.iter().map(|&h| grads_of.wrt(h)).collect();
            let norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
            if parts.iter().any(|v| !v.is_finite()) || !norm.is_finite() {
                return Err(Error::non_finite(format!(
                    "epoch {epoch} minibatch {b}: ppo {} entropy {} compression {} value {} grad norm {norm}",
                    parts[0], parts[1], parts[2], parts[3]
                )));
            }
            debug_assert_eq!(grads.len(), state.param_count());
            let mut params = state.policy.net.tensors_mut();
            params.extend(state.critic.tensors_mut());
            state.optimizer.step(&mut params, &grads, state.lr)?;
            for (s, v) in sums.iter_mut().zip(parts.iter().chain([norm].iter())) {
                *s += v;
            }
            count += 1;
        }
        let new_logp = state.policy.log_prob_batch(&buffer.states, &buffer.x, &buffer.y)?;
        let kl = kl_estimate(&buffer.old_logp, &new_logp)?;
        if kl.is_finite() {
            stats.kl = Some(kl);
        } else {
            stats.kl = None;
            stats.kl_warning = true;
        }
        state.lr = adapt_lr(kl, state.lr, cfg.kl_target, cfg.lr_min, cfg.lr_max);
    }
    if count > 0 {
        let m = |i: usize| Some(sums[i] / count as f64);
        stats.ppo_loss = m(0);
        stats.entropy_loss = m(1);
        stats.compression_loss = m(2);
        stats.value_loss = m(3);
        stats.grad_norm = m(4);
    }
    Ok(stats)
}

/// One collect → advantages → update iteration.
pub fn train_iteration(state: &mut TrainState, cfg: &TrainConfig) -> Result<IterationMetrics> {
    let iteration = state.iteration;
    let wrap = |e: Error| Error::Iteration { iteration, source: Box::new(e) };
    let mut obs = state.env.observations();
    let (mut buffer, rollout) =
        collect_rollout(&state.policy, &state.critic, &mut state.env, &mut obs, cfg.steps_per_env, cfg.gae.gamma, &mut state.rng)
            .map_err(wrap)?;
    let bootstrap = critic_values(&state.critic, &obs).map_err(wrap)?;
    buffer.finish(&bootstrap, &cfg.gae).map_err(wrap)?;
    let mut advantages = buffer.advantages.clone();
    let mut warning = false;
    if cfg.normalize_advantages {
        warning |= !normalize_advantages(&mut advantages);
    }
    let update = update_epochs(state, &buffer, &advantages, cfg).map_err(wrap)?;
    warning |= update.kl_warning;

    let episodes = rollout.episode_returns.len();
    let (return_mean, return_std) = match episodes {
        0 => (None, None),
        n => {
            let mean = rollout.episode_returns.iter().sum::<f64>() / n as f64;
            let var = rollout.episode_returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
            (Some(mean), Some(var.sqrt()))
        }
    };
    let n = buffer.len().max(1) as f64;
    let metrics = IterationMetrics {
        iteration,
        episodes,
        return_mean,
        return_std,
        kl: update.kl,
        entropy_estimate: -buffer.old_logp.iter().sum::<f64>() / n,
        ppo_loss: update.ppo_loss,
        entropy_loss: update.entropy_loss,
        compression_loss: update.compression_loss,
        value_loss: update.value_loss,
        lr: state.lr,
        compression: buffer.x.data().iter().zip(buffer.y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / buffer.x.len().max(1) as f64,
        grad_norm: update.grad_norm,
        warning,
    };
    state.iteration += 1;
    state.history.push(metrics.clone());
    Ok(metrics)
}

/// Continue `state` until it has completed `cfg.iterations` iterations,
/// handing each row to `sink` as it is produced.
pub fn train_with(
    state: &mut TrainState,
    cfg: &TrainConfig,
    mut sink: impl FnMut(&TrainState, &IterationMetrics) -> Result<()>,
) -> Result<()> {
    while state.iteration < cfg.iterations {
        let row = train_iteration(state, cfg)?;
        sink(state, &row)?;
    }
    Ok(())
}

/// Train from scratch and return the final state; its `history` holds one
/// row per iteration.
pub fn train(cfg: &TrainConfig) -> Result<TrainState> {
    let mut state = TrainState::new(cfg)?;
    train_with(&mut state, cfg, |_, _| Ok(()))?;
    Ok(state)
}

/// Mean over the last `window` rows that saw a completed episode.
pub fn tail_return(history: &[IterationMetrics], window: usize) -> Option<f64> {
    let start = history.len().saturating_sub(window);
    let vals: Vec<f64> = history[start..].iter().filter_map(|m| m.return_mean).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Mean of the compression metric over the last `window` rows.
pub fn tail_compression(history: &[IterationMetrics], window: usize) -> Option<f64> {
    let start = history.len().saturating_sub(window);
    let tail = &history[start..];
    (!tail.is_empty()).then(|| tail.iter().map(|m| m.compression).sum::<f64>() / tail.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean_return: Option<f64>,
    /// Bimodal task only: share of episodes ending nearer `g` and nearer `−g`.
    pub mode_fractions: Option<[f64; 2]>,
}

impl EvalReport {
    pub fn minority_fraction(&self) -> Option<f64> {
        self.mode_fractions.map(|[a, b]| a.min(b))
    }
}

/// Roll out the stochastic policy for `episodes` complete episodes on fresh
/// copies of `env`, seeded from `rng`.
pub fn evaluate(policy: &FlowPolicy, env: &EnvKind, episodes: usize, rng: &mut Rng) -> Result<EvalReport> {
    if episodes == 0 {
        return Ok(EvalReport::default());
    }
    let n = episodes.min(16);
    let mut venv = VecEnv::new(env.clone(), n, rng.next_u64())?;
    let mut obs = venv.reset();
    let mut returns = Vec::with_capacity(episodes);
    let mut ends = Vec::with_capacity(episodes);
    // Each slot contributes only its first episodes, counted fairly in
    // completion order, so the result does not favour short episodes.
    let mut quota = vec![episodes / n; n];
    for q in quota.iter_mut().take(episodes % n) {
        *q += 1;
    }
    while returns.len() < episodes {
        let actions = policy.sample_env_actions(&obs, rng)?;
        let out = venv.step(&actions)?;
        for i in 0..n {
            if let Some(r) = out.episode_returns[i] {
                if quota[i] > 0 {
                    quota[i] -= 1;
                    returns.push(r);
                    ends.push(out.final_positions[i]);
                }
            }
        }
        obs = out.obs;
    }
    let mean_return = Some(returns.iter().sum::<f64>() / returns.len() as f64);
    let mode_fractions = match env {
        EnvKind::BimodalReach(c) => {
            let pos = ends.iter().filter(|p| p[0] * c.goal[0] + p[1] * c.goal[1] > 0.0).count() as f64;
            let total = ends.len() as f64;
            Some([pos / total, 1.0 - pos / total])
        }
        EnvKind::PointMass(_) => None,
    };
    Ok(EvalReport { returns, mean_return, mode_fractions })
}
