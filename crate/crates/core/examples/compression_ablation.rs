//! Compare the dummy-action gap `(x − y)²` with and without the compression
//! penalty on the point-mass task.
//!
//! `cargo run --release --example compression_ablation -- [seeds] [iterations]`

use genpo::objectives::LossConfig;
use genpo::trainer::{tail_compression, train, TrainConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() -> genpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let window = (iterations / 6).max(1);
    for nu in [0.01, 0.0] {
        let mut tails = Vec::new();
        for seed in 0..seeds {
            let cfg = TrainConfig {
                seed,
                iterations,
                loss: LossConfig { compression_coef: nu, ..LossConfig::default() },
                ..TrainConfig::default()
            };
            let state = train(&cfg)?;
            let tail = tail_compression(&state.history, window).unwrap_or(f64::NAN);
            println!("nu {nu:<5} seed {seed}  mean (x-y)^2 over last {window} iterations {tail:.4}");
            tails.push(tail);
        }
        println!("nu {nu:<5} median {:.4}", median(tails));
    }
    Ok(())
}
