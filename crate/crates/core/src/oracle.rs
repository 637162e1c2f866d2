//! Brute-force checks that do not share kernels with the code they verify.
//!
//! Maps and losses are treated as black boxes and probed by central
//! differences; determinants come from a local pivoted LU factorization.

use crate::error::{Error, Result};
use crate::flow_policy::{FlowPolicy, NoisePair};
use crate::numerics::{sample_standard_normal, Rng, Tensor};

/// Central-difference step used by every oracle.
pub const FD_STEP: f64 = 1e-5;

/// Largest dimension `numerical_logdet` accepts.
pub const MAX_LOGDET_DIM: usize = 12;

/// Relative error with a floor on the denominator so that entries whose
/// true value is near zero are compared absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// `m × m` Jacobian of `map` at `point` by central differences.
pub fn numerical_jacobian(map: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>, point: &[f64], h: f64) -> Result<Vec<Vec<f64>>> {
    let m = point.len();
    let mut jac = vec![vec![0.0; m]; m];
    let mut probe = point.to_vec();
    for j in 0..m {
        probe[j] = point[j] + h;
        let plus = map(&probe)?;
        probe[j] = point[j] - h;
        let minus = map(&probe)?;
        probe[j] = point[j];
        if plus.len() != m || minus.len() != m {
            return Err(Error::shape("numerical_jacobian", format!("map returned {} values for {m} inputs", plus.len())));
        }
        for i in 0..m {
            jac[i][j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `log|det A|` by LU with partial pivoting.
pub fn log_abs_det(mut a: Vec<Vec<f64>>) -> Result<f64> {
    let m = a.len();
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut log_det = 0.0;
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        let pv = a[pivot][col];
        if pv.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Contract(format!(
                "Jacobian is singular to tolerance: pivot {pv:e} in column {col}, largest entry {scale:e}"
            )));
        }
        a.swap(col, pivot);
        log_det += pv.abs().ln();
        for r in col + 1..m {
            let f = a[r][col] / pv;
            for c in col..m {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    Ok(log_det)
}

/// `log|det ∂map/∂x|` at `point` via a central-difference Jacobian.
pub fn numerical_logdet(map: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>, point: &[f64], h: f64) -> Result<f64> {
    if point.len() > MAX_LOGDET_DIM {
        return Err(Error::Contract(format!(
            "numerical_logdet limited to {MAX_LOGDET_DIM} dimensions, got {}",
            point.len()
        )));
    }
    log_abs_det(numerical_jacobian(map, point, h)?)
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad(loss: &mut dyn FnMut(&[f64]) -> Result<f64>, params: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        probe[j] = params[j] + h;
        let plus = loss(&probe)?;
        probe[j] = params[j] - h;
        let minus = loss(&probe)?;
        probe[j] = params[j];
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare a reverse-mode gradient against [`finite_diff_grad`].
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> GradReport {
    let mut report = GradReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(*a, *n);
        if i == 0 || e > report.max_rel_error {
            report = GradReport { max_rel_error: e, worst_index: i, analytic: *a, numeric: *n };
        }
    }
    report
}

/// Monte Carlo entropy `−mean(log π(ã|s))` with its standard error.
pub fn mc_entropy(policy: &FlowPolicy, state: &[f64], n_samples: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if n_samples < 2 {
        return Err(Error::Contract("mc_entropy needs at least two samples".into()));
    }
    let states = repeat_state(state, n_samples)?;
    let out = policy.act(&states, rng)?;
    let neg: Vec<f64> = out.log_probs.iter().map(|v| -v).collect();
    Ok(mean_and_stderr(&neg))
}

/// Largest `‖invert(sample(z)) − z‖∞` over random states and noises.
pub fn roundtrip_scan(policy: &FlowPolicy, trials: usize, rng: &mut Rng) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Contract("roundtrip_scan needs at least one trial".into()));
    }
    let d = policy.cfg.action_dim;
    let states = sample_standard_normal(rng, &[trials, policy.cfg.state_dim]);
    let zx = sample_standard_normal(rng, &[trials, d]);
    let zy = sample_standard_normal(rng, &[trials, d]);
    let mut worst = 0.0f64;
    for r in 0..trials {
        let state = states.row_slice(r);
        let noise = NoisePair { zx: zx.row_slice(r).to_vec(), zy: zy.row_slice(r).to_vec() };
        let action = policy.reverse_sample(state, &noise)?;
        let back = policy.forward_invert(state, &action)?;
        for (a, b) in back.zx.iter().chain(&back.zy).zip(noise.zx.iter().chain(&noise.zy)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// The reverse-sampling map `R^{2d} → R^{2d}` at a fixed state, as a
/// black box for [`numerical_logdet`].
pub fn sampling_map<'a>(policy: &'a FlowPolicy, state: &'a [f64]) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + 'a {
    let d = policy.cfg.action_dim;
    move |z: &[f64]| {
        let noise = NoisePair { zx: z[..d].to_vec(), zy: z[d..].to_vec() };
        let a = policy.reverse_sample(state, &noise)?;
        Ok(a.x.into_iter().chain(a.y).collect())
    }
}

/// `log N(z; 0, I)` computed directly.
pub fn std_normal_log_density(z: &[f64]) -> f64 {
    z.iter().map(|v| -0.5 * v * v - 0.5 * (2.0 * std::f64::consts::PI).ln()).sum()
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn repeat_state(state: &[f64], n: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * state.len());
    for _ in 0..n {
        data.extend_from_slice(state);
    }
    Tensor::new(vec![n, state.len()], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_policy::{FlowConfig, NetArch};
    use crate::numerics::seeded;

    #[test]
    fn scaling_map_logdet() {
        let mut double = |x: &[f64]| Ok(x.iter().map(|v| 2.0 * v).collect());
        let ld = numerical_logdet(&mut double, &[0.3, -1.2], FD_STEP).unwrap();
        assert!((ld - 2.0 * 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn mixing_pair_logdet() {
        let p = 0.9;
        let mut mix = |v: &[f64]| {
            let x = p * v[0] + (1.0 - p) * v[1];
            let y = p * v[1] + (1.0 - p) * x;
            Ok(vec![x, y])
        };
        let ld = numerical_logdet(&mut mix, &[1.0, 0.0], FD_STEP).unwrap();
        assert!((ld - 2.0 * p.ln()).abs() < 1e-8, "{ld}");
    }

    #[test]
    fn composition_adds_logdets() {
        let mut f = |v: &[f64]| Ok(vec![v[0] + v[1].sin(), 3.0 * v[1]]);
        let mut g = |v: &[f64]| Ok(vec![0.5 * v[0], v[1] + v[0].powi(3)]);
        let pt = [0.4, -0.3];
        let lf = numerical_logdet(&mut f, &pt, FD_STEP).unwrap();
        let fp = f(&pt).unwrap();
        let lg = numerical_logdet(&mut g, &fp, FD_STEP).unwrap();
        let mut gf = |v: &[f64]| g(&f(v)?);
        let lgf = numerical_logdet(&mut gf, &pt, FD_STEP).unwrap();
        assert!((lgf - lf - lg).abs() < 1e-4);
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let mut collapse = |v: &[f64]| Ok(vec![v[0] + v[1], v[0] + v[1]]);
        let err = numerical_logdet(&mut collapse, &[1.0, 2.0], FD_STEP).unwrap_err();
        assert!(err.to_string().contains("singular"));
    }

    #[test]
    fn oversized_logdet_rejected() {
        let mut id = |v: &[f64]| Ok(v.to_vec());
        assert!(numerical_logdet(&mut id, &[0.0; 13], FD_STEP).is_err());
    }

    #[test]
    fn finite_differences_on_simple_losses() {
        let mut quad = |p: &[f64]| Ok(p[0] * p[0] + 3.0 * p[1] * p[1]);
        let g = finite_diff_grad(&mut quad, &[1.5, -2.0], FD_STEP).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9 && (g[1] + 12.0).abs() < 1e-9);
        let mut constant = |_: &[f64]| Ok(4.2);
        assert_eq!(finite_diff_grad(&mut constant, &[1.0, 2.0, 3.0], FD_STEP).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_policy_roundtrip_is_exact() {
        let cfg = FlowConfig { mixing: 1.0, ..FlowConfig::new(2, 2) };
        let mut pol = FlowPolicy::new(cfg, &NetArch::default(), &mut seeded(0)).unwrap();
        pol.net.set_constant_velocity(&[0.0, 0.0]).unwrap();
        assert_eq!(roundtrip_scan(&pol, 50, &mut seeded(1)).unwrap(), 0.0);
    }
}
