//! Train, stop, resume from the checkpoint and confirm the result matches an
//! uninterrupted run byte for byte.
//!
//! `cargo run --release --example checkpoint_resume -- [iterations] [split]`

use genpo::cli::config::RunConfig;
use genpo::cli::run_train;
use genpo::trainer::TrainConfig;

fn main() -> genpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let split = args.next().and_then(|s| s.parse().ok()).unwrap_or(iterations / 2);
    let root = std::env::temp_dir().join(format!("genpo-resume-{}", std::process::id()));
    let full = RunConfig { train: TrainConfig { iterations, ..TrainConfig::default() }, ..RunConfig::default() };
    let head = RunConfig { train: TrainConfig { iterations: split, ..full.train.clone() }, ..full.clone() };

    let (a, b) = (root.join("uninterrupted"), root.join("resumed"));
    run_train(&full, &a, None)?;
    run_train(&head, &b, None)?;
    run_train(&full, &b, Some(&b.join("checkpoint.genpo")))?;

    for file in ["metrics.jsonl", "checkpoint.genpo"] {
        let read = |dir: &std::path::Path| std::fs::read(dir.join(file)).map_err(|e| genpo::Error::io(dir.join(file), e));
        println!("{file}: identical = {}", read(&a)? == read(&b)?);
    }
    println!("runs written under {}", root.display());
    Ok(())
}
