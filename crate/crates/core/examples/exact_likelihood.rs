//! Compare the closed-form log-likelihood with a change of variables through
//! a finite-difference Jacobian of the sampler.
//!
//! `cargo run --release --example exact_likelihood`

use genpo::flow_policy::{FlowConfig, FlowPolicy, NetArch, NoisePair};
use genpo::numerics::{sample_standard_normal, seeded};
use genpo::oracle::{numerical_logdet, sampling_map, std_normal_log_density, FD_STEP};

fn main() -> genpo::Result<()> {
    let mut rng = seeded(2);
    for (d, steps) in [(1, 1), (2, 2), (3, 3)] {
        let cfg = FlowConfig { steps, mixing: 0.9, ..FlowConfig::new(4, d) };
        let policy = FlowPolicy::new(cfg.clone(), &NetArch::default(), &mut rng)?;
        let state = sample_standard_normal(&mut rng, &[4]).into_data();
        let z = sample_standard_normal(&mut rng, &[2 * d]).into_data();
        let action = policy.reverse_sample(&state, &NoisePair { zx: z[..d].to_vec(), zy: z[d..].to_vec() })?;
        let exact = policy.log_prob(&state, &action)?;
        let logdet = numerical_logdet(&mut sampling_map(&policy, &state), &z, FD_STEP)?;
        let oracle = std_normal_log_density(&z) - logdet;
        println!(
            "d {d} T {steps}: log_prob {exact:.8}  numerical {oracle:.8}  log-det {logdet:.6} (closed form {:.6})",
            cfg.log_det()
        );
    }
    Ok(())
}
