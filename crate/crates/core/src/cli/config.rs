//! Run configuration files.
//!
//! A TOML document with a `[run]` table for output settings and a `[train]`
//! table (plus `[train.flow]`, `[train.arch]`, `[train.loss]`, `[train.gae]`,
//! `[train.env]`) for everything the trainer reads. Every key is optional;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsFormat {
    /// One JSON object per line.
    #[default]
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Output directory; when absent a directory under the output root is
    /// derived from the seed.
    pub out_dir: Option<PathBuf>,
    pub metrics_format: MetricsFormat,
    /// Write a checkpoint every this many iterations (and always at the end).
    pub checkpoint_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { out_dir: None, metrics_format: MetricsFormat::Jsonl, checkpoint_every: 50 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run.checkpoint_every == 0 {
            return Err(Error::Config("run.checkpoint_every must be at least 1".into()));
        }
        self.train.validate().map_err(|e| match e {
            Error::Config(msg) if !msg.starts_with("train.") => Error::Config(format!("train: {msg}")),
            other => other,
        })
    }

    /// The output directory: explicit setting, else `<root>/seed-<seed>`.
    pub fn out_dir(&self, root: &Path) -> PathBuf {
        self.run.out_dir.clone().unwrap_or_else(|| root.join(format!("seed-{}", self.train.seed)))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot render config: {e}")))
    }
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let t = &cfg.train;
        assert_eq!((t.flow.steps, t.flow.mixing_p), (5, 0.9));
        assert_eq!((t.loss.compression_coef, t.loss.entropy_coef, t.loss.clip), (0.01, 0.01, 0.2));
        assert_eq!((t.gae.gamma, t.gae.lambda), (0.99, 0.95));
        assert_eq!((t.kl_target, t.learning_rate), (0.01, 1e-3));
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse_config_str(
            "[train]\nseed = 7\niterations = 3\n[train.flow]\nmixing_p = 0.5\n[train.env]\nkind = \"bimodal_reach\"\nhorizon = 20\n",
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.flow.mixing_p, 0.5);
        match cfg.train.env {
            EnvKind::BimodalReach(c) => assert_eq!(c.horizon, 20),
            other => panic!("unexpected env {other:?}"),
        }
    }

    #[test]
    fn range_errors_name_the_key() {
        let err = parse_config_str("[train.flow]\nmixing_p = 1.5\n").unwrap_err().to_string();
        assert!(err.contains("mixing p"), "{err}");
        let err = parse_config_str("[train.flow]\nsteps = 0\n").unwrap_err().to_string();
        assert!(err.contains("flow.steps"), "{err}");
    }

    #[test]
    fn unknown_and_mistyped_keys_rejected() {
        let err = parse_config_str("[train]\nwarp_speed = 9\n").unwrap_err().to_string();
        assert!(err.contains("warp_speed"), "{err}");
        let err = parse_config_str("[train]\niterations = \"many\"\n").unwrap_err().to_string();
        assert!(err.contains("iterations"), "{err}");
    }

    #[test]
    fn rendered_config_parses_back() {
        let cfg = RunConfig::default();
        assert_eq!(parse_config_str(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
