//! Monte Carlo entropy against the closed-form constant, and the sampled KL
//! estimate for a pair of shifted Gaussian flows.
//!
//! `cargo run --release --example entropy_and_kl -- [samples]`

use genpo::cli::verify::shifted_gaussian_kl;
use genpo::flow_policy::{FlowConfig, FlowPolicy, NetArch};
use genpo::numerics::{sample_standard_normal, seeded};
use genpo::oracle::mc_entropy;

fn main() -> genpo::Result<()> {
    let samples = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let mut rng = seeded(3);
    let cfg = FlowConfig::new(4, 2);
    let policy = FlowPolicy::new(cfg.clone(), &NetArch::default(), &mut rng)?;
    println!("closed-form entropy {:.5}", cfg.entropy());
    for _ in 0..3 {
        let state = sample_standard_normal(&mut rng, &[4]).into_data();
        let (est, se) = mc_entropy(&policy, &state, samples, &mut rng)?;
        println!("state {state:.3?}: estimate {est:.5} +- {se:.5}");
    }
    for mu in [0.25, 0.5, 1.0] {
        let (est, se) = shifted_gaussian_kl(mu, samples, &mut rng)?;
        println!("shift {mu}: KL estimate {est:.5} +- {se:.5}, exact {:.5}", mu * mu / 2.0);
    }
    Ok(())
}
