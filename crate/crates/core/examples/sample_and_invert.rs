//! Draw a dummy action from a random flow policy, map it to an environment
//! action, then recover the noise exactly.
//!
//! `cargo run --release --example sample_and_invert`

use genpo::flow_policy::{FlowConfig, FlowPolicy, NetArch, NoisePair};
use genpo::numerics::{sample_standard_normal, seeded};

fn main() -> genpo::Result<()> {
    let mut rng = seeded(1);
    let cfg = FlowConfig::new(6, 2);
    let policy = FlowPolicy::new(cfg.clone(), &NetArch::default(), &mut rng)?;
    let state = sample_standard_normal(&mut rng, &[6]).into_data();
    let noise = NoisePair {
        zx: sample_standard_normal(&mut rng, &[2]).into_data(),
        zy: sample_standard_normal(&mut rng, &[2]).into_data(),
    };
    let action = policy.reverse_sample(&state, &noise)?;
    let back = policy.forward_invert(&state, &action)?;
    println!("noise         zx {:?} zy {:?}", noise.zx, noise.zy);
    println!("dummy action  x {:?} y {:?}", action.x, action.y);
    println!("env action    {:?}", action.env_action(cfg.interpolation_alpha));
    println!("recovered     zx {:?} zy {:?}", back.zx, back.zy);
    let err = back.zx.iter().chain(&back.zy).zip(noise.zx.iter().chain(&noise.zy)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max error     {err:.2e}");
    Ok(())
}
