//! Flow policy properties checked against independent oracles.

use genpo::cli::verify::{change_of_variables_error, small_arch};
use genpo::flow_policy::{time_embed, DummyAction, FlowConfig, FlowPolicy, NetArch, NoisePair};
use genpo::numerics::mlp::{flatten, unflatten};
use genpo::numerics::{sample_standard_normal, seeded, Graph, Tape, Tensor};
use genpo::objectives::entropy_loss_values;
use genpo::oracle::{
    compare_gradients, finite_diff_grad, mc_entropy, numerical_jacobian, numerical_logdet, roundtrip_scan, sampling_map,
    std_normal_log_density, FD_STEP,
};
use proptest::prelude::*;

fn policy(state_dim: usize, d: usize, steps: usize, mixing: f64, seed: u64) -> FlowPolicy {
    let cfg = FlowConfig { steps, mixing, ..FlowConfig::new(state_dim, d) };
    FlowPolicy::new(cfg, &NetArch::default(), &mut seeded(seed)).unwrap()
}

fn identity(d: usize) -> FlowPolicy {
    let mut p = policy(2, d, 5, 1.0, 0);
    p.net.set_constant_velocity(&vec![0.0; d]).unwrap();
    p
}

#[test]
fn mish_layer_gradient_matches_finite_differences() {
    let mut rng = seeded(11);
    let x = sample_standard_normal(&mut rng, &[5, 3]);
    let theta = sample_standard_normal(&mut rng, &[3, 4]);
    let bias = Tensor::zeros(&[1, 4]);

    let mut tape = Tape::new();
    let w = tape.param(&theta);
    let b = tape.constant(bias.clone());
    let xv = tape.constant(x.clone());
    let h = tape.affine(&xv, &w, &b).unwrap();
    let m = tape.mish(&h);
    let loss = tape.sum(&m);
    let analytic = tape.backward(loss).unwrap().wrt(w).into_data();

    let mut f = |flat: &[f64]| {
        let t = Tensor::new(vec![3, 4], flat.to_vec())?;
        let out = genpo::numerics::affine(&x, &t, &bias)?;
        Ok(out.data().iter().map(|&v| genpo::numerics::mish(v)).sum())
    };
    let numeric = finite_diff_grad(&mut f, theta.data(), FD_STEP).unwrap();
    assert!(compare_gradients(&analytic, &numeric).max_rel_error <= 1e-6);
}

#[test]
fn velocity_is_locally_lipschitz_and_fd_consistent() {
    let p = policy(3, 2, 5, 0.9, 21);
    let mut rng = seeded(22);
    for _ in 0..5 {
        let state = sample_standard_normal(&mut rng, &[3]).into_data();
        let partial = sample_standard_normal(&mut rng, &[2]).into_data();
        let mut map = |u: &[f64]| p.velocity(&state, u, 0.4);
        let jac = numerical_jacobian(&mut map, &partial, 1e-5).unwrap();
        let coarse = numerical_jacobian(&mut map, &partial, 1e-3).unwrap();
        let frob: f64 = jac.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in jac.iter().flatten().zip(coarse.iter().flatten()) {
            assert!((a - b).abs() <= 1e-4 * (1.0 + frob), "{a} vs {b}");
        }
        let h = 1e-4;
        let dir = sample_standard_normal(&mut rng, &[2]).into_data();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let moved: Vec<f64> = partial.iter().zip(&dir).map(|(u, e)| u + h * e / norm).collect();
        let (v0, v1) = (map(&partial).unwrap(), map(&moved).unwrap());
        let change = v0.iter().zip(&v1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(change <= frob * h * 1.01 + 1e-10, "change {change}, bound {}", frob * h);
    }
}

#[test]
fn time_embedding_examples() {
    assert_eq!(time_embed(0.0, 4).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
    let e = time_embed(1.0, 2).unwrap();
    assert!((e[0] - 0.84147).abs() < 1e-5 && (e[1] - 0.54030).abs() < 1e-5);
    for t in [0.0, 0.3, 2.0, 4.7] {
        let e = time_embed(t, 6).unwrap();
        assert!((e.iter().map(|v| v * v).sum::<f64>() - 3.0).abs() < 1e-12);
    }
}

#[test]
fn full_sampler_log_det_is_the_mixing_constant() {
    let p = policy(3, 2, 2, 0.9, 31);
    let mut rng = seeded(32);
    let state = sample_standard_normal(&mut rng, &[3]).into_data();
    let z = sample_standard_normal(&mut rng, &[4]).into_data();
    let logdet = numerical_logdet(&mut sampling_map(&p, &state), &z, FD_STEP).unwrap();
    assert!((logdet - (-0.84289)).abs() <= 1e-4, "{logdet}");
}

#[test]
fn log_prob_offset_is_confirmed_by_numerical_jacobian() {
    let p = policy(3, 2, 5, 0.9, 41);
    let mut rng = seeded(42);
    for _ in 0..3 {
        let state = sample_standard_normal(&mut rng, &[3]).into_data();
        let z = sample_standard_normal(&mut rng, &[4]).into_data();
        let a = p.reverse_sample(&state, &NoisePair { zx: z[..2].to_vec(), zy: z[2..].to_vec() }).unwrap();
        let offset = p.log_prob(&state, &a).unwrap() - std_normal_log_density(&z);
        assert!((offset - 2.10721).abs() < 1e-5, "{offset}");
        let logdet = numerical_logdet(&mut sampling_map(&p, &state), &z, FD_STEP).unwrap();
        assert!((offset + logdet).abs() <= 1e-4);
    }
}

#[test]
fn log_prob_matches_change_of_variables_for_two_steps() {
    let p = policy(3, 2, 2, 0.9, 51);
    assert!(change_of_variables_error(&p, 5, &mut seeded(52)).unwrap() <= 1e-4);
}

#[test]
fn identity_flow_log_prob_at_origin() {
    let p = identity(1);
    let a = DummyAction { x: vec![0.0], y: vec![0.0] };
    assert!((p.log_prob(&[0.0, 0.0], &a).unwrap() - (-1.83788)).abs() < 1e-5);
}

#[test]
fn batch_log_probs_reproduce_sampled_ones() {
    let p = policy(4, 3, 5, 0.9, 61);
    let mut rng = seeded(62);
    let states = sample_standard_normal(&mut rng, &[64, 4]);
    let act = p.act(&states, &mut rng).unwrap();
    let again = p.log_prob_batch(&states, &act.x, &act.y).unwrap();
    for (a, b) in act.log_probs.iter().zip(&again) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn identity_policy_entropy_loss_recovers_gaussian_entropy() {
    for d in [1, 2] {
        let p = identity(d);
        let states = Tensor::zeros(&[100_000, 2]);
        let act = p.act(&states, &mut seeded(70 + d as u64)).unwrap();
        let neg = -entropy_loss_values(&act.log_probs, &act.log_probs).unwrap();
        let exact = d as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((neg - exact).abs() / exact <= 0.01, "d {d}: {neg} vs {exact}");
    }
}

#[test]
fn identity_entropy_is_log_two_pi_e() {
    let (est, _) = mc_entropy(&identity(1), &[0.0, 0.0], 100_000, &mut seeded(81)).unwrap();
    assert!((est - 2.83788).abs() / 2.83788 <= 0.01);
}

#[test]
fn entropy_does_not_depend_on_state() {
    let p = policy(3, 2, 5, 0.9, 91);
    let mut rng = seeded(92);
    let (a, sa) = mc_entropy(&p, &[2.0, -1.0, 0.5], 100_000, &mut rng).unwrap();
    let (b, sb) = mc_entropy(&p, &[-3.0, 0.0, 1.5], 100_000, &mut rng).unwrap();
    assert!((a - b).abs() <= 3.0 * (sa + sb), "{a} +- {sa} vs {b} +- {sb}");
    assert!((a - 3.56855).abs() / 3.56855 <= 0.01);
}

#[test]
fn log_prob_parameter_gradient_matches_finite_differences() {
    let cfg = FlowConfig { steps: 3, mixing: 0.9, ..FlowConfig::new(2, 2) };
    let p = FlowPolicy::new(cfg, &small_arch(), &mut seeded(101)).unwrap();
    let mut rng = seeded(102);
    let states = sample_standard_normal(&mut rng, &[3, 2]);
    let x = sample_standard_normal(&mut rng, &[3, 2]);
    let y = sample_standard_normal(&mut rng, &[3, 2]);

    let mut tape = Tape::new();
    let bound = p.bind(&mut tape).unwrap();
    let (s, xv, yv) = (tape.constant(states.clone()), tape.constant(x.clone()), tape.constant(y.clone()));
    let lp = p.log_prob_graph(&mut tape, &bound, &s, &xv, &yv).unwrap();
    let loss = tape.sum(&lp);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = bound.handles().into_iter().flat_map(|h| grads.wrt(h).into_data()).collect();

    let mut probe = p.clone();
    let mut f = |theta: &[f64]| {
        unflatten(&mut probe.net.tensors_mut(), theta)?;
        Ok(probe.log_prob_batch(&states, &x, &y)?.iter().sum())
    };
    let numeric = finite_diff_grad(&mut f, &flatten(&p.net.tensors()), FD_STEP).unwrap();
    assert!(compare_gradients(&analytic, &numeric).max_rel_error <= 1e-4);
}

#[test]
fn roundtrip_at_default_settings() {
    for d in [1, 2, 4] {
        let p = policy(4, d, 5, 0.9, 110 + d as u64);
        assert!(roundtrip_scan(&p, 200, &mut seeded(120)).unwrap() <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sample_then_invert_recovers_noise(
        seed in 0u64..1000,
        d in 1usize..4,
        steps in 1usize..8,
        mixing in 0.7f64..=1.0,
        z in prop::collection::vec(-4.0f64..4.0, 6),
    ) {
        let p = policy(3, d, steps, mixing, seed);
        let state = [z[0], -z[1], 0.5];
        let noise = NoisePair { zx: z[..d].to_vec(), zy: z[3..3 + d].to_vec() };
        let back = p.forward_invert(&state, &p.reverse_sample(&state, &noise).unwrap()).unwrap();
        for (a, b) in back.zx.iter().chain(&back.zy).zip(noise.zx.iter().chain(&noise.zy)) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn log_prob_is_density_of_recovered_noise_plus_constant(
        seed in 0u64..1000,
        d in 1usize..4,
        steps in 1usize..6,
        mixing in 0.5f64..=1.0,
        a in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let p = policy(2, d, steps, mixing, seed);
        let state = [a[5], a[4]];
        let action = DummyAction { x: a[..d].to_vec(), y: a[3..3 + d].to_vec() };
        let z = p.forward_invert(&state, &action).unwrap();
        let zz: Vec<f64> = z.zx.iter().chain(&z.zy).copied().collect();
        let expected = std_normal_log_density(&zz) - 2.0 * (d * steps) as f64 * mixing.ln();
        prop_assert!((p.log_prob(&state, &action).unwrap() - expected).abs() <= 1e-10);
    }

    #[test]
    fn equal_halves_interpolate_to_themselves(u in prop::collection::vec(-5.0f64..5.0, 1..5), alpha in 0.0f64..=1.0) {
        let a = DummyAction { x: u.clone(), y: u.clone() };
        for (got, want) in a.env_action(alpha).iter().zip(&u) {
            prop_assert!((got - want).abs() <= 1e-12);
        }
    }
}
