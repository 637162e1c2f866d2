//! The oracle suite behind `genpo verify`.

use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::error::Result;
use crate::flow_policy::{DummyAction, FlowConfig, FlowPolicy, NetArch, NoisePair};
use crate::numerics::mlp::{flatten, unflatten};
use crate::numerics::{sample_standard_normal, seeded, Eval, Mlp, Rng, Tape, Tensor};
use crate::objectives::{kl_estimate, LossConfig};
use crate::oracle::{
    compare_gradients, finite_diff_grad, mc_entropy, numerical_logdet, roundtrip_scan, sampling_map,
    std_normal_log_density, FD_STEP,
};
use crate::trainer::{minibatch_loss, Minibatch, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Check {
        Check { name: name.into(), measured, tolerance, passed: measured <= tolerance }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<44} measured {:.3e}  tolerance {:.1e}", self.name, self.measured, self.tolerance)
    }
}

/// Architecture small enough for finite differences over every weight.
pub fn small_arch() -> NetArch {
    NetArch { embed_dim: 4, time_layers: vec![6, 4], velocity_hidden: vec![10] }
}

pub fn random_policy(cfg: FlowConfig, arch: &NetArch, rng: &mut Rng) -> Result<FlowPolicy> {
    FlowPolicy::new(cfg, arch, rng)
}

/// Worst round-trip error over `nets` random networks with `trials` each.
pub fn roundtrip_error(cfg: &FlowConfig, arch: &NetArch, nets: usize, trials: usize, rng: &mut Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..nets {
        let policy = random_policy(cfg.clone(), arch, rng)?;
        worst = worst.max(roundtrip_scan(&policy, trials, rng)?);
    }
    Ok(worst)
}

/// Largest gap between `log_prob` and the standard normal density of the
/// recovered noise minus `2dT·ln p`.
pub fn likelihood_identity_error(policy: &FlowPolicy, cases: usize, rng: &mut Rng) -> Result<f64> {
    let d = policy.cfg.action_dim;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let state = sample_standard_normal(rng, &[policy.cfg.state_dim]).into_data();
        let a = DummyAction {
            x: sample_standard_normal(rng, &[d]).into_data(),
            y: sample_standard_normal(rng, &[d]).into_data(),
        };
        let z = policy.forward_invert(&state, &a)?;
        let zz: Vec<f64> = z.zx.iter().chain(&z.zy).copied().collect();
        let expected = std_normal_log_density(&zz) - policy.cfg.log_det();
        worst = worst.max((policy.log_prob(&state, &a)? - expected).abs());
    }
    Ok(worst)
}

/// Largest gap between `log_prob` and a change of variables through a
/// finite-difference Jacobian of the sampler.
pub fn change_of_variables_error(policy: &FlowPolicy, cases: usize, rng: &mut Rng) -> Result<f64> {
    let d = policy.cfg.action_dim;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let state = sample_standard_normal(rng, &[policy.cfg.state_dim]).into_data();
        let z = sample_standard_normal(rng, &[2 * d]).into_data();
        let mut map = sampling_map(policy, &state);
        let logdet = numerical_logdet(&mut map, &z, FD_STEP)?;
        let action = policy.reverse_sample(&state, &NoisePair { zx: z[..d].to_vec(), zy: z[d..].to_vec() })?;
        let oracle = std_normal_log_density(&z) - logdet;
        worst = worst.max((policy.log_prob(&state, &action)? - oracle).abs());
    }
    Ok(worst)
}

/// Relative gap between a Monte Carlo entropy estimate and the analytic
/// constant, with the estimate's standard error.
pub fn entropy_gap(policy: &FlowPolicy, state: &[f64], samples: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    let (est, se) = mc_entropy(policy, state, samples, rng)?;
    let exact = policy.cfg.entropy();
    Ok(((est - exact).abs() / exact.abs(), se))
}

/// KL between an identity flow and the same flow shifted by a constant
/// velocity, estimated from samples of the unshifted one. The shift is split
/// between the two halves so that its total norm is `mu`.
pub fn shifted_gaussian_kl(mu: f64, samples: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    let cfg = FlowConfig { mixing: 1.0, ..FlowConfig::new(2, 1) };
    let mut old = FlowPolicy::new(cfg.clone(), &small_arch(), rng)?;
    old.net.set_constant_velocity(&[0.0])?;
    let mut new = FlowPolicy::new(cfg, &small_arch(), rng)?;
    new.net.set_constant_velocity(&[mu / SQRT_2])?;
    let states = Tensor::new(vec![samples, 2], vec![0.0; samples * 2])?;
    let act = old.act(&states, rng)?;
    let new_logp = new.log_prob_batch(&states, &act.x, &act.y)?;
    let diffs: Vec<f64> = act.log_probs.iter().zip(&new_logp).map(|(o, n)| o - n).collect();
    let est = kl_estimate(&act.log_probs, &new_logp)?;
    let (_, se) = crate::oracle::mean_and_stderr(&diffs);
    Ok((est, se))
}

/// Reverse-mode versus central-difference gradient of `log_prob` summed over
/// a small batch, with respect to every velocity-field parameter.
pub fn log_prob_gradient_error(policy: &FlowPolicy, rows: usize, rng: &mut Rng) -> Result<f64> {
    let d = policy.cfg.action_dim;
    let states = sample_standard_normal(rng, &[rows, policy.cfg.state_dim]);
    let x = sample_standard_normal(rng, &[rows, d]);
    let y = sample_standard_normal(rng, &[rows, d]);

    let mut tape = Tape::new();
    let bound = policy.bind(&mut tape)?;
    let (s, xv, yv) = (tape_const(&mut tape, &states), tape_const(&mut tape, &x), tape_const(&mut tape, &y));
    let lp = policy.log_prob_graph(&mut tape, &bound, &s, &xv, &yv)?;
    let loss = crate::numerics::Graph::sum(&mut tape, &lp);
    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = bound.handles().into_iter().flat_map(|h| grads.wrt(h).into_data()).collect();

    let base = flatten(&policy.net.tensors());
    let mut probe = policy.clone();
    let mut f = |theta: &[f64]| -> Result<f64> {
        unflatten(&mut probe.net.tensors_mut(), theta)?;
        Ok(probe.log_prob_batch(&states, &x, &y)?.iter().sum())
    };
    let numeric = finite_diff_grad(&mut f, &base, FD_STEP)?;
    Ok(compare_gradients(&analytic, &numeric).max_rel_error)
}

/// Reverse-mode versus central-difference gradients of the minibatch
/// objective: the policy total (clipped surrogate, entropy and compression
/// terms) and the combined loss with the value term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossGradErrors {
    pub policy_total: f64,
    pub combined: f64,
}

pub fn total_loss_gradient_error(policy: &FlowPolicy, critic: &Mlp, rows: usize, rng: &mut Rng) -> Result<LossGradErrors> {
    let d = policy.cfg.action_dim;
    let states = sample_standard_normal(rng, &[rows, policy.cfg.state_dim]);
    let x = sample_standard_normal(rng, &[rows, d]);
    let y = sample_standard_normal(rng, &[rows, d]);
    let logp = policy.log_prob_batch(&states, &x, &y)?;
    // Old log-probabilities near the current ones keep every ratio inside
    // the clip band, away from the surrogate's kinks.
    let jitter = sample_standard_normal(rng, &[rows]);
    let old: Vec<f64> = logp.iter().zip(jitter.data()).map(|(l, j)| l + 0.02 * j).collect();
    let mb = Minibatch {
        states: states.clone(),
        x,
        y,
        old_logp: Tensor::column(&old),
        advantages: sample_standard_normal(rng, &[rows, 1]),
        returns: sample_standard_normal(rng, &[rows, 1]),
        zx: sample_standard_normal(rng, &[rows, d]),
        zy: sample_standard_normal(rng, &[rows, d]),
    };
    let loss_cfg = LossConfig { entropy_coef: 0.1, compression_coef: 0.1, ..LossConfig::default() };

    let mut base = flatten(&policy.net.tensors());
    let split = base.len();
    base.extend(flatten(&critic.tensors()));

    let mut errors = [0.0; 2];
    for (slot, combined) in errors.iter_mut().zip([false, true]) {
        let mut tape = Tape::new();
        let bound = policy.bind(&mut tape)?;
        let cb = critic.bind(&mut tape);
        let loss = minibatch_loss(&mut tape, policy, &bound, &cb, &mb, &loss_cfg)?;
        let grads = tape.backward(if combined { loss.combined } else { loss.policy_total })?;
        let mut handles = bound.handles();
        handles.extend(cb.handles());
        let analytic: Vec<f64> = handles.into_iter().flat_map(|h| grads.wrt(h).into_data()).collect();

        let (mut p, mut c) = (policy.clone(), critic.clone());
        let mut f = |theta: &[f64]| -> Result<f64> {
            unflatten(&mut p.net.tensors_mut(), &theta[..split])?;
            unflatten(&mut c.tensors_mut(), &theta[split..])?;
            let mut g = Eval;
            let bound = p.bind(&mut g)?;
            let cb = c.bind(&mut g);
            let loss = minibatch_loss(&mut g, &p, &bound, &cb, &mb, &loss_cfg)?;
            Ok(if combined { loss.combined.item() } else { loss.policy_total.item() })
        };
        let numeric = finite_diff_grad(&mut f, &base, FD_STEP)?;
        *slot = compare_gradients(&analytic, &numeric).max_rel_error;
    }
    Ok(LossGradErrors { policy_total: errors[0], combined: errors[1] })
}

fn tape_const(tape: &mut Tape, t: &Tensor) -> crate::numerics::Var {
    crate::numerics::Graph::constant(tape, t.clone())
}

/// Run every check for the flow settings in `cfg`.
///
/// Round-trip accuracy is bounded below by roughly `p^(−2T)` units in the
/// last place, since each unmixing step divides the `x − y` gap by `p²`;
/// configurations with small `p` and many steps fail the `1e-8` check for
/// that reason alone.
pub fn run_suite(cfg: &TrainConfig) -> Result<Vec<Check>> {
    let mut rng = seeded(cfg.seed);
    let flow = cfg.flow_config();
    let arch = &cfg.arch;
    let mut checks = Vec::new();

    let rt = roundtrip_error(&flow, arch, 4, 100, &mut rng)?;
    checks.push(Check::at_most("round trip, configured flow", rt, 1e-8));

    let policy = random_policy(flow.clone(), arch, &mut rng)?;
    let gap = likelihood_identity_error(&policy, 50, &mut rng)?;
    checks.push(Check::at_most("log_prob identity", gap, 1e-10));

    let cov_cfg = FlowConfig { steps: flow.steps.min(3), ..flow.clone() };
    let cov_policy = random_policy(cov_cfg, arch, &mut rng)?;
    let gap = change_of_variables_error(&cov_policy, 10, &mut rng)?;
    checks.push(Check::at_most("change of variables vs numerical Jacobian", gap, 1e-4));

    let state = sample_standard_normal(&mut rng, &[flow.state_dim]).into_data();
    let (rel, _) = entropy_gap(&policy, &state, 20_000, &mut rng)?;
    checks.push(Check::at_most("Monte Carlo entropy vs constant (relative)", rel, 0.01));

    let (kl, se) = shifted_gaussian_kl(0.5, 20_000, &mut rng)?;
    checks.push(Check::at_most("KL of shifted pair, |est - 0.125| / stderr", (kl - 0.125).abs() / se, 3.0));
    let lp = policy.log_prob_batch(
        &sample_standard_normal(&mut rng, &[8, flow.state_dim]),
        &sample_standard_normal(&mut rng, &[8, flow.action_dim]),
        &sample_standard_normal(&mut rng, &[8, flow.action_dim]),
    )?;
    checks.push(Check::at_most("KL of a policy with itself", kl_estimate(&lp, &lp)?.abs(), 0.0));

    let small_cfg = FlowConfig { steps: flow.steps.min(3), ..flow.clone() };
    let small = random_policy(small_cfg, &small_arch(), &mut rng)?;
    let critic = Mlp::new(&[flow.state_dim, 6, 1], &mut rng)?;
    let err = log_prob_gradient_error(&small, 4, &mut rng)?;
    checks.push(Check::at_most("log_prob gradient vs finite differences", err, 1e-4));
    let err = total_loss_gradient_error(&small, &critic, 4, &mut rng)?;
    checks.push(Check::at_most("policy loss gradient vs finite differences", err.policy_total, 1e-4));
    checks.push(Check::at_most("combined loss gradient vs finite differences", err.combined, 1e-4));

    Ok(checks)
}
