//! Train on the two-goal reach task and report how evaluation episodes split
//! between the goals.
//!
//! `cargo run --release --example bimodal_reach -- [seed] [iterations]`

use genpo::envs::{BimodalReachConfig, EnvKind};
use genpo::numerics::seeded;
use genpo::trainer::{evaluate, tail_return, train, TrainConfig};

fn main() -> genpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let cfg = TrainConfig {
        seed,
        iterations,
        env: EnvKind::BimodalReach(BimodalReachConfig::default()),
        ..TrainConfig::default()
    };
    let state = train(&cfg)?;
    let report = evaluate(&state.policy, &cfg.env, 200, &mut seeded(seed + 1000))?;
    let [near_g, near_neg] = report.mode_fractions.expect("bimodal task reports modes");
    println!("final 20-iteration training return {:?}", tail_return(&state.history, 20));
    println!("evaluation return {:.3}", report.mean_return.unwrap_or(f64::NAN));
    println!("episodes ending near +g {near_g:.3}, near -g {near_neg:.3}");
    Ok(())
}
