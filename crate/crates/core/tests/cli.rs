//! End-to-end runs of the `genpo` binary.

use std::path::Path;
use std::process::{Command, Output};

use genpo::cli::checkpoint;
use genpo::cli::metrics::read_metrics;

fn genpo(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genpo"))
        .args(args)
        .env("GENPO_OUT", root)
        .output()
        .expect("spawn genpo")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

const TINY: &str = r#"
[train]
iterations = 1
n_envs = 2
steps_per_env = 8
minibatch_size = 8
value_hidden = [8]

[train.arch]
embed_dim = 4
time_layers = [4]
velocity_hidden = [8]
"#;

#[test]
fn train_then_eval_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let run = dir.path().join("run");
    let out = genpo(&["train", "--config", config.to_str().unwrap(), "--out-dir", run.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(read_metrics(&run.join("metrics.jsonl")).unwrap().len(), 1);

    let ck = run.join("checkpoint.genpo");
    let out = genpo(&["eval", "--checkpoint", ck.to_str().unwrap(), "--episodes", "4"], dir.path());
    assert!(out.status.success(), "{}", text(&out));

    let csv = dir.path().join("plot.csv");
    let out = genpo(&["export-plot-data", "--metrics", run.to_str().unwrap(), "--output", csv.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);
}

#[test]
fn default_out_dir_uses_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let out = genpo(&["train", "--config", config.to_str().unwrap(), "--seed", "3"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert!(dir.path().join("seed-3").join("checkpoint.genpo").exists());
}

#[test]
fn corrupted_checkpoint_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("broken.genpo");
    std::fs::write(&ck, "NOTGENPO 1\n{}").unwrap();
    let err = checkpoint::load(&ck).unwrap_err().to_string();
    assert!(err.contains("broken.genpo"), "{err}");
    let out = genpo(&["eval", "--checkpoint", ck.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("broken.genpo"));
}

#[test]
fn out_of_range_mixing_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[train.flow]\nmixing_p = 1.5\n").unwrap();
    let out = genpo(&["train", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("mixing p"), "{}", text(&out));

    std::fs::write(&config, "[train.flow]\nsteps = 0\n").unwrap();
    let out = genpo(&["train", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_on_defaults_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = genpo(&["verify"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(!text(&out).contains("FAIL"));
}
