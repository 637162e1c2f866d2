//! Checkpoint files: a `GENPO <version>` header line followed by a JSON
//! payload with named parameter sections and all state needed to resume.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::envs::VecEnv;
use crate::flow_policy::{FlowConfig, FlowPolicy};
use crate::numerics::mlp::{flatten, unflatten};
use crate::numerics::{seeded, Adam, Mlp, Rng};
use crate::trainer::{IterationMetrics, TrainConfig, TrainState};

pub const MAGIC: &str = "GENPO";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    config: TrainConfig,
    flow: FlowConfig,
    iteration: usize,
    lr: f64,
    velocity_net: Vec<f64>,
    time_embed_mlp: Vec<f64>,
    value_net: Vec<f64>,
    optimizer: Adam,
    rng: Rng,
    env: VecEnv,
    history: Vec<IterationMetrics>,
}

pub fn save(path: &Path, cfg: &TrainConfig, state: &TrainState) -> Result<()> {
    let payload = Payload {
        config: cfg.clone(),
        flow: state.policy.cfg.clone(),
        iteration: state.iteration,
        lr: state.lr,
        velocity_net: flatten(&state.policy.net.velocity_mlp.tensors()),
        time_embed_mlp: flatten(&state.policy.net.time_mlp.tensors()),
        value_net: flatten(&state.critic.tensors()),
        optimizer: state.optimizer.clone(),
        rng: state.rng.clone(),
        env: state.env.clone(),
        history: state.history.clone(),
    };
    let body = serde_json::to_string(&payload).map_err(|e| Error::Checkpoint { path: path.into(), reason: e.to_string() })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, format!("{MAGIC} {VERSION}\n{body}\n")).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Restore the configuration and training state stored at `path`.
pub fn load(path: &Path) -> Result<(TrainConfig, TrainState)> {
    let bad = |reason: String| Error::Checkpoint { path: path.into(), reason };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (header, body) = text.split_once('\n').ok_or_else(|| bad("missing header line".into()))?;
    let mut words = header.split_whitespace();
    if words.next() != Some(MAGIC) {
        return Err(bad(format!("bad magic, expected {MAGIC:?}")));
    }
    let version: u32 = words.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("missing format version".into()))?;
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let p: Payload = serde_json::from_str(body).map_err(|e| bad(e.to_string()))?;
    if p.flow != p.config.flow_config() {
        return Err(bad("flow settings disagree with the stored config".into()));
    }
    let mut policy = FlowPolicy::new(p.flow, &p.config.arch, &mut seeded(0))?;
    unflatten(&mut policy.net.velocity_mlp.tensors_mut(), &p.velocity_net).map_err(|e| bad(format!("velocity_net: {e}")))?;
    unflatten(&mut policy.net.time_mlp.tensors_mut(), &p.time_embed_mlp).map_err(|e| bad(format!("time_embed_mlp: {e}")))?;
    let mut sizes = vec![p.config.env.spec().obs_dim];
    sizes.extend(&p.config.value_hidden);
    sizes.push(1);
    let mut critic = Mlp::new(&sizes, &mut seeded(0))?;
    unflatten(&mut critic.tensors_mut(), &p.value_net).map_err(|e| bad(format!("value_net: {e}")))?;
    let state = TrainState {
        policy,
        critic,
        optimizer: p.optimizer,
        lr: p.lr,
        iteration: p.iteration,
        rng: p.rng,
        env: p.env,
        history: p.history,
    };
    Ok((p.config, state))
}
