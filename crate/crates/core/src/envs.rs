//! Small deterministic continuous-control tasks, vectorized in lockstep.
//!
//! Both tasks move a 2-D point mass with clipped force inputs:
//!
//! ```text
//! vel' = vel + clip(a)·dt − drag·vel·dt
//! pos' = pos + vel'·dt
//! ```
//!
//! Finished episodes reset automatically from the environment's own seeded
//! generator.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{seeded, Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub max_episode_steps: usize,
    pub action_bound: f64,
}

/// Reach a fixed goal from a random start near the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointMassConfig {
    pub dt: f64,
    pub drag: f64,
    pub goal: [f64; 2],
    /// Starts are uniform in a disk of this radius around the origin.
    pub start_radius: f64,
    pub horizon: usize,
    pub action_bound: f64,
    pub goal_tolerance: f64,
    /// Proportional and derivative gains of the scripted controller.
    pub pd_gains: [f64; 2],
}

impl Default for PointMassConfig {
    fn default() -> Self {
        PointMassConfig {
            dt: 0.05,
            drag: 0.1,
            goal: [1.0, 0.0],
            start_radius: 0.5,
            horizon: 100,
            action_bound: 1.0,
            goal_tolerance: 0.05,
            pd_gains: [4.0, 3.0],
        }
    }
}

/// Two goals `g` and `−g`, start at the origin; reward follows the nearer one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BimodalReachConfig {
    pub dt: f64,
    pub drag: f64,
    pub goal: [f64; 2],
    pub horizon: usize,
    pub action_bound: f64,
    pub goal_tolerance: f64,
}

impl Default for BimodalReachConfig {
    fn default() -> Self {
        BimodalReachConfig { dt: 0.05, drag: 0.1, goal: [0.5, 0.0], horizon: 50, action_bound: 1.0, goal_tolerance: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    PointMass(PointMassConfig),
    BimodalReach(BimodalReachConfig),
}

impl EnvKind {
    pub fn spec(&self) -> EnvSpec {
        match self {
            EnvKind::PointMass(c) => EnvSpec { obs_dim: 6, act_dim: 2, max_episode_steps: c.horizon, action_bound: c.action_bound },
            EnvKind::BimodalReach(c) => EnvSpec { obs_dim: 4, act_dim: 2, max_episode_steps: c.horizon, action_bound: c.action_bound },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (dt, drag, horizon, bound, tol) = match self {
            EnvKind::PointMass(c) => {
                if !(c.start_radius >= 0.0) {
                    return Err(Error::Config("env.start_radius must be non-negative".into()));
                }
                (c.dt, c.drag, c.horizon, c.action_bound, c.goal_tolerance)
            }
            EnvKind::BimodalReach(c) => {
                if c.goal == [0.0, 0.0] {
                    return Err(Error::Config("env.goal must be non-zero for the bimodal task".into()));
                }
                (c.dt, c.drag, c.horizon, c.action_bound, c.goal_tolerance)
            }
        };
        if !(dt > 0.0) {
            return Err(Error::Config(format!("env.dt must be positive, got {dt}")));
        }
        if horizon == 0 {
            return Err(Error::Config("env.horizon must be at least 1".into()));
        }
        if !(bound > 0.0) || !(tol > 0.0) || !(drag >= 0.0) {
            return Err(Error::Config("env.action_bound and env.goal_tolerance must be positive, env.drag non-negative".into()));
        }
        Ok(())
    }

    fn physics(&self) -> (f64, f64, f64) {
        match self {
            EnvKind::PointMass(c) => (c.dt, c.drag, c.action_bound),
            EnvKind::BimodalReach(c) => (c.dt, c.drag, c.action_bound),
        }
    }

    fn horizon(&self) -> usize {
        self.spec().max_episode_steps
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// One lockstep transition for all environments.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// Observations after any automatic reset.
    pub obs: Tensor,
    pub rewards: Vec<f64>,
    /// Episode ended, by termination or by the time limit.
    pub dones: Vec<bool>,
    /// Goal reached.
    pub terminated: Vec<bool>,
    /// Time limit hit without reaching the goal.
    pub truncated: Vec<bool>,
    /// Observations reached by this step, before any reset.
    pub final_obs: Tensor,
    /// Positions reached by this step, before any reset.
    pub final_positions: Vec<[f64; 2]>,
    /// Undiscounted return of each episode that ended on this step.
    pub episode_returns: Vec<Option<f64>>,
}

/// A batch of independent environments of the same kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VecEnv {
    kind: EnvKind,
    pos: Vec<[f64; 2]>,
    vel: Vec<[f64; 2]>,
    elapsed: Vec<usize>,
    running_return: Vec<f64>,
    rng: Rng,
}

impl VecEnv {
    pub fn new(kind: EnvKind, n_envs: usize, seed: u64) -> Result<Self> {
        kind.validate()?;
        if n_envs == 0 {
            return Err(Error::Config("n_envs must be positive".into()));
        }
        Ok(VecEnv {
            kind,
            pos: vec![[0.0; 2]; n_envs],
            vel: vec![[0.0; 2]; n_envs],
            elapsed: vec![0; n_envs],
            running_return: vec![0.0; n_envs],
            rng: seeded(seed),
        })
    }

    pub fn kind(&self) -> &EnvKind {
        &self.kind
    }

    pub fn spec(&self) -> EnvSpec {
        self.kind.spec()
    }

    pub fn n_envs(&self) -> usize {
        self.pos.len()
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        self.pos[i]
    }

    pub fn velocity(&self, i: usize) -> [f64; 2] {
        self.vel[i]
    }

    /// Place environment `i` at an explicit state, clearing its episode.
    pub fn set_state(&mut self, i: usize, pos: [f64; 2], vel: [f64; 2]) {
        self.pos[i] = pos;
        self.vel[i] = vel;
        self.elapsed[i] = 0;
        self.running_return[i] = 0.0;
    }

    fn reset_one(&mut self, i: usize) {
        let start = match &self.kind {
            EnvKind::PointMass(c) => {
                let r = c.start_radius * self.rng.random::<f64>().sqrt();
                let theta = self.rng.random_range(0.0..std::f64::consts::TAU);
                [r * theta.cos(), r * theta.sin()]
            }
            EnvKind::BimodalReach(_) => [0.0, 0.0],
        };
        self.set_state(i, start, [0.0, 0.0]);
    }

    /// Reset every environment; returns `n_envs × obs_dim` observations.
    pub fn reset(&mut self) -> Tensor {
        for i in 0..self.n_envs() {
            self.reset_one(i);
        }
        self.observations()
    }

    fn observe(&self, i: usize) -> Vec<f64> {
        let (p, v) = (self.pos[i], self.vel[i]);
        match &self.kind {
            EnvKind::PointMass(c) => vec![p[0], p[1], v[0], v[1], c.goal[0] - p[0], c.goal[1] - p[1]],
            EnvKind::BimodalReach(_) => vec![p[0], p[1], v[0], v[1]],
        }
    }

    pub fn observations(&self) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..self.n_envs()).map(|i| self.observe(i)).collect();
        Tensor::from_rows(&rows).expect("uniform rows")
    }

    /// Reward and goal test at a position.
    fn score(&self, pos: [f64; 2]) -> (f64, bool) {
        match &self.kind {
            EnvKind::PointMass(c) => {
                let d2 = dist2(pos, c.goal);
                (-d2, d2.sqrt() < c.goal_tolerance)
            }
            EnvKind::BimodalReach(c) => {
                let neg = [-c.goal[0], -c.goal[1]];
                let d2 = dist2(pos, c.goal).min(dist2(pos, neg));
                (-d2, d2.sqrt() < c.goal_tolerance)
            }
        }
    }

    /// Advance every environment by one step with `actions` (`n_envs × 2`).
    pub fn step(&mut self, actions: &Tensor) -> Result<StepResult> {
        let n = self.n_envs();
        let (rows, cols) = actions.check_2d("VecEnv::step")?;
        if rows != n || cols != 2 {
            return Err(Error::shape("VecEnv::step", format!("actions {rows}×{cols}, expected {n}×2")));
        }
        if let Some(bad) = actions.data().iter().find(|a| a.is_nan()) {
            return Err(Error::Contract(format!("NaN action {bad}")));
        }
        let (dt, drag, bound) = self.kind.physics();
        let horizon = self.kind.horizon();
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        let mut terminated = Vec::with_capacity(n);
        let mut truncated = Vec::with_capacity(n);
        let mut final_rows = Vec::with_capacity(n);
        let mut final_positions = Vec::with_capacity(n);
        let mut episode_returns = Vec::with_capacity(n);
        for i in 0..n {
            let a = actions.row_slice(i);
            for k in 0..2 {
                let force = a[k].clamp(-bound, bound);
                self.vel[i][k] += force * dt - drag * self.vel[i][k] * dt;
                self.pos[i][k] += self.vel[i][k] * dt;
            }
            self.elapsed[i] += 1;
            let (reward, reached) = self.score(self.pos[i]);
            self.running_return[i] += reward;
            let timeout = !reached && self.elapsed[i] >= horizon;
            rewards.push(reward);
            terminated.push(reached);
            truncated.push(timeout);
            dones.push(reached || timeout);
            final_rows.push(self.observe(i));
            final_positions.push(self.pos[i]);
            if reached || timeout {
                episode_returns.push(Some(self.running_return[i]));
                self.reset_one(i);
            } else {
                episode_returns.push(None);
            }
        }
        Ok(StepResult {
            obs: self.observations(),
            rewards,
            dones,
            terminated,
            truncated,
            final_obs: Tensor::from_rows(&final_rows)?,
            final_positions,
            episode_returns,
        })
    }

    /// PD action toward the goal for environment `i`, clipped to the bound.
    pub fn scripted_controller(&self, i: usize) -> Result<Vec<f64>> {
        match &self.kind {
            EnvKind::PointMass(c) => Ok(pd_action(c, self.pos[i], self.vel[i]).to_vec()),
            EnvKind::BimodalReach(_) => Err(Error::Contract("scripted controller only supports the point-mass task".into())),
        }
    }
}

pub fn pd_action(cfg: &PointMassConfig, pos: [f64; 2], vel: [f64; 2]) -> [f64; 2] {
    let [kp, kd] = cfg.pd_gains;
    let mut a = [0.0; 2];
    for k in 0..2 {
        a[k] = (kp * (cfg.goal[k] - pos[k]) - kd * vel[k]).clamp(-cfg.action_bound, cfg.action_bound);
    }
    a
}

/// Mean episode return of the scripted controller over `episodes` starts.
pub fn oracle_return(cfg: &PointMassConfig, episodes: usize, seed: u64) -> Result<f64> {
    let mut env = VecEnv::new(EnvKind::PointMass(cfg.clone()), episodes.max(1), seed)?;
    env.reset();
    let mut finished: Vec<Option<f64>> = vec![None; env.n_envs()];
    while finished.iter().any(Option::is_none) {
        let actions: Vec<Vec<f64>> = (0..env.n_envs()).map(|i| env.scripted_controller(i)).collect::<Result<_>>()?;
        let out = env.step(&Tensor::from_rows(&actions)?)?;
        for (slot, r) in finished.iter_mut().zip(out.episode_returns) {
            if slot.is_none() {
                *slot = r;
            }
        }
    }
    Ok(finished.iter().map(|r| r.expect("all finished")).sum::<f64>() / finished.len() as f64)
}
