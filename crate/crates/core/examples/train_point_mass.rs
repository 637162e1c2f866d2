//! Train on the point-mass task and compare against the scripted controller.
//!
//! `cargo run --release --example train_point_mass -- [seed] [iterations]`

use genpo::envs::{oracle_return, EnvKind};
use genpo::trainer::{tail_return, train_with, TrainConfig, TrainState};

fn main() -> genpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let cfg = TrainConfig { seed, iterations, ..TrainConfig::default() };
    let EnvKind::PointMass(pm) = &cfg.env else { unreachable!("default task is point mass") };
    let oracle = oracle_return(pm, 256, 12345)?;
    println!("scripted controller return {oracle:.3}");

    let start = std::time::Instant::now();
    let mut state = TrainState::new(&cfg)?;
    train_with(&mut state, &cfg, |_, m| {
        if m.iteration % 20 == 0 || m.iteration + 1 == cfg.iterations {
            println!(
                "iter {:4}  return {:>9}  kl {:>9}  lr {:.2e}  entropy {:.3}  (x-y)^2 {:.4}",
                m.iteration,
                m.return_mean.map_or("-".into(), |r| format!("{r:.3}")),
                m.kl.map_or("-".into(), |k| format!("{k:.5}")),
                m.lr,
                m.entropy_estimate,
                m.compression,
            );
        }
        Ok(())
    })?;
    let tail = tail_return(&state.history, 20);
    println!("final 20-iteration return {tail:?} after {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
