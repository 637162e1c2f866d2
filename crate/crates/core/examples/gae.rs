//! Advantage estimation on a short hand-written trajectory.
//!
//! `cargo run --example gae`

use genpo::rollout::{compute_gae, normalize_advantages, GaeConfig};

fn main() -> genpo::Result<()> {
    let rewards = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let values = [0.2, 0.3, 0.6, 0.1, 0.4, 0.8];
    let dones = [false, false, true, false, false, false];
    for (gamma, lambda) in [(0.99, 0.95), (0.99, 0.0), (1.0, 1.0)] {
        let (adv, ret) = compute_gae(&rewards, &values, &dones, &[0.5], 1, &GaeConfig { gamma, lambda })?;
        let mut norm = adv.clone();
        normalize_advantages(&mut norm);
        println!("gamma {gamma} lambda {lambda}");
        println!("  advantages {adv:.4?}");
        println!("  returns    {ret:.4?}");
        println!("  normalized {norm:.4?}");
    }
    Ok(())
}
