//! Rollout, loss and trainer properties.

use genpo::envs::{BimodalReachConfig, EnvKind};
use genpo::flow_policy::{FlowConfig, FlowPolicy, NetArch};
use genpo::numerics::{sample_standard_normal, seeded, Eval, Graph, Mlp, Tape, Tensor};
use genpo::objectives::{
    compression_loss, entropy_loss, kl_estimate, ppo_clip_loss, total_policy_loss, LossConfig, LossParts,
};
use genpo::oracle::mean_and_stderr;
use genpo::rollout::{collect_rollout, compute_gae, minibatches, normalize_advantages, GaeConfig};
use genpo::trainer::{adapt_lr, evaluate, train_iteration, update_epochs, TrainConfig, TrainState};
use proptest::prelude::*;

fn small() -> TrainConfig {
    TrainConfig {
        n_envs: 2,
        steps_per_env: 16,
        minibatch_size: 16,
        arch: NetArch { embed_dim: 4, time_layers: vec![8, 8], velocity_hidden: vec![16] },
        value_hidden: vec![16],
        ..TrainConfig::default()
    }
}

fn rollout(cfg: &TrainConfig, steps: usize) -> genpo::rollout::RolloutBuffer {
    let mut state = TrainState::new(cfg).unwrap();
    let mut obs = state.env.observations();
    let (buffer, _) =
        collect_rollout(&state.policy, &state.critic, &mut state.env, &mut obs, steps, 0.99, &mut state.rng).unwrap();
    buffer
}

#[test]
fn zero_step_rollout_is_empty() {
    let buffer = rollout(&small(), 0);
    assert!(buffer.is_empty());
    assert_eq!(buffer.states.shape(), &[0, 6]);
}

#[test]
fn seeded_rollouts_are_identical() {
    let (a, b) = (rollout(&small(), 12), rollout(&small(), 12));
    assert_eq!(a.states, b.states);
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    assert_eq!(a.old_logp, b.old_logp);
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.dones, b.dones);
}

#[test]
fn stored_log_probs_are_recomputable() {
    let cfg = small();
    let buffer = rollout(&cfg, 20);
    let policy = TrainState::new(&cfg).unwrap().policy;
    let again = policy.log_prob_batch(&buffer.states, &buffer.x, &buffer.y).unwrap();
    for (a, b) in buffer.old_logp.iter().zip(&again) {
        assert!((a - b).abs() <= 1e-8);
    }
}

#[test]
fn total_gradient_is_sum_of_component_gradients() {
    let cfg = FlowConfig { steps: 3, mixing: 0.9, ..FlowConfig::new(3, 2) };
    let policy = FlowPolicy::new(cfg, &NetArch { embed_dim: 4, time_layers: vec![6], velocity_hidden: vec![8] }, &mut seeded(5))
        .unwrap();
    let mut rng = seeded(6);
    let states = sample_standard_normal(&mut rng, &[6, 3]);
    let (x, y) = (sample_standard_normal(&mut rng, &[6, 2]), sample_standard_normal(&mut rng, &[6, 2]));
    let (zx, zy) = (sample_standard_normal(&mut rng, &[6, 2]), sample_standard_normal(&mut rng, &[6, 2]));
    let logp = policy.log_prob_batch(&states, &x, &y).unwrap();
    let old: Vec<f64> = logp.iter().map(|l| l + 0.05).collect();
    let adv = sample_standard_normal(&mut rng, &[6, 1]);
    let loss_cfg = LossConfig { entropy_coef: 0.3, compression_coef: 0.7, ..LossConfig::default() };

    // Index 0..3 picks a single component; 3 is the weighted total.
    let grad_of = |which: usize| -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = policy.bind(&mut tape).unwrap();
        let (s, xv, yv) = (tape.constant(states.clone()), tape.constant(x.clone()), tape.constant(y.clone()));
        let (o, a) = (tape.constant(Tensor::column(&old)), tape.constant(adv.clone()));
        let (zxv, zyv) = (tape.constant(zx.clone()), tape.constant(zy.clone()));
        let new = policy.log_prob_graph(&mut tape, &bound, &s, &xv, &yv).unwrap();
        let ppo = ppo_clip_loss(&mut tape, &new, &o, &a, 0.2).unwrap();
        let entropy = entropy_loss(&mut tape, &new, &o).unwrap();
        let (sx, sy) = policy.reverse_sample_graph(&mut tape, &bound, &s, &zxv, &zyv).unwrap();
        let compression = compression_loss(&mut tape, &sx, &sy).unwrap();
        let parts = LossParts { ppo, entropy, compression };
        let target = match which {
            0 => parts.ppo,
            1 => parts.entropy,
            2 => parts.compression,
            _ => total_policy_loss(&mut tape, &parts, &loss_cfg).unwrap(),
        };
        let grads = tape.backward(target).unwrap();
        bound.handles().into_iter().flat_map(|h| grads.wrt(h).into_data()).collect()
    };
    let (gp, ge, gc, gt) = (grad_of(0), grad_of(1), grad_of(2), grad_of(3));
    for i in 0..gt.len() {
        let sum = gp[i] + 0.3 * ge[i] + 0.7 * gc[i];
        assert!((gt[i] - sum).abs() <= 1e-12 * (1.0 + sum.abs()), "param {i}: {} vs {sum}", gt[i]);
    }
}

#[test]
fn unclipped_first_step_is_vanilla_policy_gradient() {
    let cfg = small();
    let policy = TrainState::new(&cfg).unwrap().policy;
    let buffer = rollout(&cfg, 16);
    let mut adv: Vec<f64> = sample_standard_normal(&mut seeded(8), &[buffer.len()]).into_data();
    normalize_advantages(&mut adv);

    let grad = |vanilla: bool| -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = policy.bind(&mut tape).unwrap();
        let s = tape.constant(buffer.states.clone());
        let (xv, yv) = (tape.constant(buffer.x.clone()), tape.constant(buffer.y.clone()));
        let old = tape.constant(Tensor::column(&buffer.old_logp));
        let a = tape.constant(Tensor::column(&adv));
        let new = policy.log_prob_graph(&mut tape, &bound, &s, &xv, &yv).unwrap();
        let loss = if vanilla {
            let w = tape.mul(&new, &a).unwrap();
            let m = tape.mean(&w).unwrap();
            tape.scale(&m, -1.0)
        } else {
            ppo_clip_loss(&mut tape, &new, &old, &a, 1e9).unwrap()
        };
        let grads = tape.backward(loss).unwrap();
        bound.handles().into_iter().flat_map(|h| grads.wrt(h).into_data()).collect()
    };
    let (clip, vanilla) = (grad(false), grad(true));
    for (a, b) in clip.iter().zip(&vanilla) {
        assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn update_keeps_kl_nonnegative_within_sampling_error() {
    let cfg = small();
    let mut state = TrainState::new(&cfg).unwrap();
    let mut obs = state.env.observations();
    let (mut buffer, _) =
        collect_rollout(&state.policy, &state.critic, &mut state.env, &mut obs, cfg.steps_per_env, 0.99, &mut state.rng)
            .unwrap();
    let bootstrap = genpo::rollout::critic_values(&state.critic, &obs).unwrap();
    buffer.finish(&bootstrap, &cfg.gae).unwrap();
    let mut adv = buffer.advantages.clone();
    normalize_advantages(&mut adv);
    let old = state.policy.clone();
    update_epochs(&mut state, &buffer, &adv, &cfg).unwrap();
    assert_ne!(old, state.policy);

    let n = 100_000;
    let rows: Vec<usize> = (0..n).map(|i| i % buffer.len()).collect();
    let states = buffer.states.gather_rows(&rows);
    let act = old.act(&states, &mut seeded(9)).unwrap();
    let new_logp = state.policy.log_prob_batch(&states, &act.x, &act.y).unwrap();
    let kl = kl_estimate(&act.log_probs, &new_logp).unwrap();
    let diffs: Vec<f64> = act.log_probs.iter().zip(&new_logp).map(|(o, n)| o - n).collect();
    let (_, se) = mean_and_stderr(&diffs);
    assert!(kl >= -3.0 * se, "kl {kl}, stderr {se}");
}

#[test]
fn untrained_bimodal_policy_is_balanced() {
    let cfg = TrainConfig { env: EnvKind::BimodalReach(BimodalReachConfig::default()), ..TrainConfig::default() };
    let state = TrainState::new(&cfg).unwrap();
    let report = evaluate(&state.policy, &cfg.env, 200, &mut seeded(77)).unwrap();
    let [a, b] = report.mode_fractions.unwrap();
    let sigma = (0.25f64 / 200.0).sqrt();
    assert!((a - 0.5).abs() <= 3.0 * sigma && (b - 0.5).abs() <= 3.0 * sigma, "{a} {b}");
}

#[test]
fn learning_rate_stays_in_bounds_during_training() {
    let cfg = TrainConfig { iterations: 6, ..small() };
    let mut state = TrainState::new(&cfg).unwrap();
    for _ in 0..cfg.iterations {
        let row = train_iteration(&mut state, &cfg).unwrap();
        assert!(row.lr >= cfg.lr_min && row.lr <= cfg.lr_max);
    }
}

#[test]
fn eval_graph_and_tape_agree_on_loss_values() {
    let cfg = FlowConfig::new(2, 2);
    let policy = FlowPolicy::new(cfg, &NetArch::default(), &mut seeded(3)).unwrap();
    let critic = Mlp::new(&[2, 4, 1], &mut seeded(4)).unwrap();
    let mut rng = seeded(5);
    let states = sample_standard_normal(&mut rng, &[5, 2]);
    let mut tape = Tape::new();
    let tb = policy.bind(&mut tape).unwrap();
    let s = tape.constant(states.clone());
    let (zx, zy) = (sample_standard_normal(&mut rng, &[5, 2]), sample_standard_normal(&mut rng, &[5, 2]));
    let (zxv, zyv) = (tape.constant(zx.clone()), tape.constant(zy.clone()));
    let (tx, _) = policy.reverse_sample_graph(&mut tape, &tb, &s, &zxv, &zyv).unwrap();
    let (ex, _) = policy.sample_batch(&states, &zx, &zy).unwrap();
    assert_eq!(tape.value(&tx), &ex);
    let mut g = Eval;
    let cb = critic.bind(&mut g);
    assert_eq!(cb.forward(&mut g, &states).unwrap().shape(), &[5, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gae_with_zero_lambda_is_td_error(
        r in prop::collection::vec(-2.0f64..2.0, 1..12),
        seed in 0u64..100,
        gamma in 0.5f64..1.0,
    ) {
        let n = r.len();
        let v = sample_standard_normal(&mut seeded(seed), &[n]).into_data();
        let (adv, _) = compute_gae(&r, &v, &vec![false; n], &[0.3], 1, &GaeConfig { gamma, lambda: 0.0 }).unwrap();
        for t in 0..n {
            let next = if t + 1 < n { v[t + 1] } else { 0.3 };
            prop_assert!((adv[t] - (r[t] + gamma * next - v[t])).abs() <= 1e-12);
        }
    }

    #[test]
    fn gae_with_unit_discount_is_return_minus_value(r in prop::collection::vec(-2.0f64..2.0, 1..12), seed in 0u64..100) {
        let n = r.len();
        let v = sample_standard_normal(&mut seeded(seed), &[n]).into_data();
        let (adv, ret) = compute_gae(&r, &v, &vec![false; n], &[0.0], 1, &GaeConfig { gamma: 1.0, lambda: 1.0 }).unwrap();
        for t in 0..n {
            let tail: f64 = r[t..].iter().sum();
            prop_assert!((adv[t] - (tail - v[t])).abs() <= 1e-9);
            prop_assert!((ret[t] - tail).abs() <= 1e-9);
        }
    }

    #[test]
    fn normalized_advantages_are_standardized(adv in prop::collection::vec(-50.0f64..50.0, 2..40)) {
        let spread = adv.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - adv.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let mut a = adv.clone();
        prop_assert!(normalize_advantages(&mut a));
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() <= 1e-9);
        prop_assert!((std - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn minibatches_partition_indices(total in 0usize..200, batch in 1usize..70, seed in 0u64..100) {
        let parts = minibatches(total, batch, &mut seeded(seed)).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..total).collect::<Vec<_>>());
        prop_assert!(parts.iter().all(|p| p.len() <= batch && !p.is_empty()));
    }

    #[test]
    fn adapted_rate_stays_in_bounds(kl in -1.0f64..1.0, lr in 1e-5f64..1e-2, target in 1e-4f64..0.1) {
        let out = adapt_lr(kl, lr, target, 1e-5, 1e-2);
        prop_assert!((1e-5..=1e-2).contains(&out));
        if kl > target / 2.0 && kl < 2.0 * target {
            prop_assert_eq!(out, lr);
        }
    }
}
