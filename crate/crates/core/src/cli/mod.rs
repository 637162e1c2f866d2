//! Command-line front end: `train`, `eval`, `verify` and `export-plot-data`.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::numerics::seeded;
use crate::trainer::{evaluate, tail_return, train_with, EvalReport, TrainState};
pub use config::{parse_config, parse_config_str, MetricsFormat, RunConfig};
use metrics::MetricsSink;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.genpo";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "genpo", version, about = "Policy optimization with an exactly invertible flow policy")]
pub struct Cli {
    /// Root under which run directories are created when no output
    /// directory is given.
    #[arg(long, global = true, env = "GENPO_OUT", default_value = "runs")]
    pub out_root: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy, writing metrics.jsonl, config.toml and checkpoints.
    Train {
        /// TOML run configuration; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: <out-root>/seed-<seed>].
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Resume from this checkpoint instead of starting fresh.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override the configured number of iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate the stochastic policy stored in a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the oracle suite; exits nonzero if any check fails.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a metrics stream to CSV for plotting.
    ExportPlotData {
        /// A metrics.jsonl file or a run directory containing one.
        #[arg(long)]
        metrics: PathBuf,
        /// Output file [default: standard output].
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => parse_config(p),
        None => Ok(RunConfig::default()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub iterations: usize,
    pub final_return: Option<f64>,
}

/// Train (or resume) and write all artifacts into `out_dir`.
pub fn run_train(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let train_cfg = &cfg.train;
    let mut state = match resume {
        Some(path) => {
            let (stored, state) = checkpoint::load(path)?;
            let comparable = crate::trainer::TrainConfig { iterations: train_cfg.iterations, ..stored };
            if &comparable != train_cfg {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration; only iterations may change on resume",
                    path.display()
                )));
            }
            state
        }
        None => TrainState::new(train_cfg)?,
    };
    let config_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    let mut sink = match cfg.run.metrics_format {
        MetricsFormat::Jsonl => MetricsSink::open(&out_dir.join(METRICS_FILE), resume.is_some())?,
    };
    let ck_path = out_dir.join(CHECKPOINT_FILE);
    let every = cfg.run.checkpoint_every;
    train_with(&mut state, train_cfg, |st, row| {
        sink.write(row)?;
        if st.iteration % every == 0 {
            checkpoint::save(&ck_path, train_cfg, st)?;
        }
        Ok(())
    })?;
    checkpoint::save(&ck_path, train_cfg, &state)?;
    Ok(TrainSummary { out_dir: out_dir.to_path_buf(), iterations: state.iteration, final_return: tail_return(&state.history, 20) })
}

pub fn run_eval(checkpoint_path: &Path, episodes: usize, seed: u64) -> Result<EvalReport> {
    let (cfg, state) = checkpoint::load(checkpoint_path)?;
    evaluate(&state.policy, &cfg.env, episodes, &mut seeded(seed))
}

pub fn run_verify(cfg: &RunConfig) -> Result<Vec<verify::Check>> {
    cfg.validate()?;
    verify::run_suite(&cfg.train)
}

pub fn export_plot_data(metrics_path: &Path) -> Result<String> {
    let path = if metrics_path.is_dir() { metrics_path.join(METRICS_FILE) } else { metrics_path.to_path_buf() };
    Ok(metrics::to_csv(&metrics::read_metrics(&path)?))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, seed, out_dir, checkpoint, iterations } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(n) = iterations {
                cfg.train.iterations = n;
            }
            let dir = out_dir.unwrap_or_else(|| cfg.out_dir(&cli.out_root));
            let summary = run_train(&cfg, &dir, checkpoint.as_deref())?;
            println!(
                "trained {} iterations into {}; final 20-iteration return {}",
                summary.iterations,
                summary.out_dir.display(),
                fmt_opt(summary.final_return)
            );
            Ok(true)
        }
        Command::Eval { checkpoint, episodes, seed } => {
            let report = run_eval(&checkpoint, episodes, seed)?;
            println!("episodes     {}", report.returns.len());
            println!("mean return  {}", fmt_opt(report.mean_return));
            if let Some([a, b]) = report.mode_fractions {
                println!("mode split   {a:.3} near +g, {b:.3} near -g");
            }
            Ok(true)
        }
        Command::Verify { config, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let checks = run_verify(&cfg)?;
            for c in &checks {
                println!("{c}");
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            if failed.is_empty() {
                println!("all {} checks passed", checks.len());
            } else {
                println!("failed: {}", failed.join("; "));
            }
            Ok(failed.is_empty())
        }
        Command::ExportPlotData { metrics, output } => {
            let csv = export_plot_data(&metrics)?;
            match output {
                Some(path) => std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
    }
}

/// Entry point used by the `genpo` binary.
pub fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}
