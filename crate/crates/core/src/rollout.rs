//! On-policy collection, advantage estimation and minibatching.
//!
//! Buffers are step-major: the sample for step `t` of environment `e` lives at
//! flat index `t * n_envs + e`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::envs::VecEnv;
use crate::error::{Error, Result};
use crate::flow_policy::FlowPolicy;
use crate::numerics::{Eval, Graph, Mlp, Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        GaeConfig { gamma: 0.99, lambda: 0.95 }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gae.gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("gae.lambda must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    pub steps: usize,
    pub n_envs: usize,
    /// `(steps·n_envs) × state_dim`.
    pub states: Tensor,
    /// `(steps·n_envs) × d`, the `x` half of each dummy action.
    pub x: Tensor,
    /// `(steps·n_envs) × d`, the `y` half.
    pub y: Tensor,
    pub old_logp: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    /// Empty until [`RolloutBuffer::finish`] runs.
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps * self.n_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(steps·n_envs) × 2d` rows `[x | y]`.
    pub fn dummy_actions(&self) -> Result<Tensor> {
        Eval.concat(&[&self.x, &self.y])
    }

    /// Fill advantages and returns from the stored rewards and values.
    pub fn finish(&mut self, bootstrap_values: &[f64], cfg: &GaeConfig) -> Result<()> {
        let (adv, ret) = compute_gae(&self.rewards, &self.values, &self.dones, bootstrap_values, self.n_envs, cfg)?;
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

/// Backward GAE sweep over step-major arrays.
///
/// `δ_t = r_t + γ(1−done_t)V_{t+1} − V_t`,
/// `Â_t = δ_t + γλ(1−done_t)Â_{t+1}`, `R̂_t = Â_t + V_t`,
/// with `V_N` taken from `bootstrap_values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_values: &[f64],
    n_envs: usize,
    cfg: &GaeConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let total = rewards.len();
    if n_envs == 0 || values.len() != total || dones.len() != total || total % n_envs != 0 || bootstrap_values.len() != n_envs {
        return Err(Error::shape(
            "compute_gae",
            format!(
                "{} rewards, {} values, {} dones, {} bootstrap values for {n_envs} envs",
                total,
                values.len(),
                dones.len(),
                bootstrap_values.len()
            ),
        ));
    }
    let steps = total / n_envs;
    let mut adv = vec![0.0; total];
    for e in 0..n_envs {
        let mut next_value = bootstrap_values[e];
        let mut next_adv = 0.0;
        for t in (0..steps).rev() {
            let i = t * n_envs + e;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + cfg.gamma * live * next_value - values[i];
            next_adv = delta + cfg.gamma * cfg.lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = values[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Standardize in place to zero mean and unit (population) standard
/// deviation. Returns `false` and leaves the input untouched when fewer than
/// two values are given.
pub fn normalize_advantages(adv: &mut [f64]) -> bool {
    if adv.len() < 2 {
        return false;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
    true
}

/// Shuffled index sets covering `0..total` exactly once. The final batch is
/// smaller when `batch_size` does not divide `total`.
pub fn minibatches(total: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("minibatch size must be positive".into()));
    }
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(rng);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// What a collection phase produced besides the buffer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutStats {
    /// Returns of episodes that finished during the phase, in completion order.
    pub episode_returns: Vec<f64>,
    /// Final positions of those episodes.
    pub episode_endpoints: Vec<[f64; 2]>,
}

pub fn critic_values(critic: &Mlp, states: &Tensor) -> Result<Vec<f64>> {
    let mut g = Eval;
    let bound = critic.bind(&mut g);
    Ok(bound.forward(&mut g, states)?.into_data())
}

/// Step every environment `steps` times under `policy`, continuing from
/// `obs`, which is updated to the observation after the last step.
///
/// Episodes cut by the time limit fold `γ·V(final_obs)` into the last
/// reward and are marked done, so GAE stops at the boundary without
/// biasing the value target.
pub fn collect_rollout(
    policy: &FlowPolicy,
    critic: &Mlp,
    env: &mut VecEnv,
    obs: &mut Tensor,
    steps: usize,
    gamma: f64,
    rng: &mut Rng,
) -> Result<(RolloutBuffer, RolloutStats)> {
    let n = env.n_envs();
    let (s_dim, d) = (policy.cfg.state_dim, policy.cfg.action_dim);
    if obs.shape() != [n, s_dim] {
        return Err(Error::shape("collect_rollout", format!("observations {:?}, expected [{n}, {s_dim}]", obs.shape())));
    }
    let total = steps * n;
    let mut states = Vec::with_capacity(total * s_dim);
    let mut xs = Vec::with_capacity(total * d);
    let mut ys = Vec::with_capacity(total * d);
    let mut old_logp = Vec::with_capacity(total);
    let mut rewards = Vec::with_capacity(total);
    let mut dones = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    let mut stats = RolloutStats::default();

    for t in 0..steps {
        let v = critic_values(critic, obs)?;
        let act = policy.act(obs, rng).map_err(|e| Error::EnvStep { step: t, source: Box::new(e) })?;
        let out = env.step(&act.env_actions).map_err(|e| Error::EnvStep { step: t, source: Box::new(e) })?;

        let mut r = out.rewards.clone();
        if out.truncated.iter().any(|&tr| tr) {
            let tail = critic_values(critic, &out.final_obs)?;
            for i in 0..n {
                if out.truncated[i] {
                    r[i] += gamma * tail[i];
                }
            }
        }
        for i in 0..n {
            if let Some(ret) = out.episode_returns[i] {
                stats.episode_returns.push(ret);
                stats.episode_endpoints.push(out.final_positions[i]);
            }
        }

        states.extend_from_slice(obs.data());
        xs.extend_from_slice(act.x.data());
        ys.extend_from_slice(act.y.data());
        old_logp.extend(act.log_probs);
        rewards.extend(r);
        dones.extend(out.dones);
        values.extend(v);
        *obs = out.obs;
    }

    let buffer = RolloutBuffer {
        steps,
        n_envs: n,
        states: Tensor::new(vec![total, s_dim], states)?,
        x: Tensor::new(vec![total, d], xs)?,
        y: Tensor::new(vec![total, d], ys)?,
        old_logp,
        rewards,
        dones,
        values,
        advantages: Vec::new(),
        returns: Vec::new(),
    };
    Ok((buffer, stats))
}
