//! Scalar training losses. All of them are minimized.
//!
//! The graph-generic forms take `n × 1` columns (or `n × d` matrices for the
//! compression term) so the trainer can differentiate them; the `*_values`
//! helpers evaluate the same code on plain slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Eval, Graph, Tensor};

/// Bound on `new_logp − old_logp` before exponentiating a ratio.
pub const LOG_RATIO_CLAMP: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Surrogate clip range ε.
    pub clip: f64,
    /// Entropy coefficient λ.
    pub entropy_coef: f64,
    /// Compression coefficient ν.
    pub compression_coef: f64,
    pub value_coef: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { clip: 0.2, entropy_coef: 0.01, compression_coef: 0.01, value_coef: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("loss.clip must be positive, got {}", self.clip)));
        }
        if !(self.entropy_coef >= 0.0) || !(self.compression_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return Err(Error::Config("loss.entropy_coef, loss.compression_coef and loss.value_coef must be non-negative".into()));
        }
        Ok(())
    }
}

fn same_len<G: Graph>(g: &G, a: &G::Value, b: &G::Value, op: &'static str) -> Result<()> {
    let (sa, sb) = (g.value(a).shape(), g.value(b).shape());
    if sa != sb {
        return Err(Error::Contract(format!("{op}: inputs have shapes {sa:?} and {sb:?}")));
    }
    Ok(())
}

/// `exp(clamp(new − old, ±20))`.
pub fn ratio<G: Graph>(g: &mut G, new_logp: &G::Value, old_logp: &G::Value) -> Result<G::Value> {
    same_len(g, new_logp, old_logp, "ratio")?;
    let diff = g.sub(new_logp, old_logp)?;
    let diff = g.clamp(&diff, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
    Ok(g.exp(&diff))
}

/// `−mean(min(r·Â, clip(r, 1−ε, 1+ε)·Â))`.
pub fn ppo_clip_loss<G: Graph>(
    g: &mut G,
    new_logp: &G::Value,
    old_logp: &G::Value,
    adv: &G::Value,
    clip: f64,
) -> Result<G::Value> {
    same_len(g, new_logp, adv, "ppo_clip_loss")?;
    let r = ratio(g, new_logp, old_logp)?;
    let unclipped = g.mul(&r, adv)?;
    let rc = g.clamp(&r, 1.0 - clip, 1.0 + clip);
    let clipped = g.mul(&rc, adv)?;
    let m = g.minimum(&unclipped, &clipped)?;
    let mean = g.mean(&m)?;
    Ok(g.scale(&mean, -1.0))
}

/// `mean(r · new_logp)`, differentiated through both factors.
pub fn entropy_loss<G: Graph>(g: &mut G, new_logp: &G::Value, old_logp: &G::Value) -> Result<G::Value> {
    let r = ratio(g, new_logp, old_logp)?;
    let w = g.mul(&r, new_logp)?;
    g.mean(&w)
}

/// `mean((x − y)²)` over all entries.
pub fn compression_loss<G: Graph>(g: &mut G, x: &G::Value, y: &G::Value) -> Result<G::Value> {
    let (sx, sy) = (g.value(x).shape(), g.value(y).shape());
    if sx != sy {
        return Err(Error::shape("compression_loss", format!("{sx:?} vs {sy:?}")));
    }
    let diff = g.sub(x, y)?;
    let sq = g.square(&diff);
    g.mean(&sq)
}

pub fn value_loss<G: Graph>(g: &mut G, v_pred: &G::Value, returns: &G::Value) -> Result<G::Value> {
    same_len(g, v_pred, returns, "value_loss")?;
    let diff = g.sub(v_pred, returns)?;
    let sq = g.square(&diff);
    g.mean(&sq)
}

/// Per-minibatch loss components.
#[derive(Clone, Debug)]
pub struct LossParts<V> {
    pub ppo: V,
    pub entropy: V,
    pub compression: V,
}

/// `ppo + λ·entropy + ν·compression`.
pub fn total_policy_loss<G: Graph>(g: &mut G, parts: &LossParts<G::Value>, cfg: &LossConfig) -> Result<G::Value> {
    let ent = g.scale(&parts.entropy, cfg.entropy_coef);
    let comp = g.scale(&parts.compression, cfg.compression_coef);
    let s = g.add(&parts.ppo, &ent)?;
    g.add(&s, &comp)
}

/// `mean(old − new)` over samples drawn from the old policy.
pub fn kl_estimate(old_logp: &[f64], new_logp: &[f64]) -> Result<f64> {
    if old_logp.len() != new_logp.len() {
        return Err(Error::Contract(format!(
            "kl_estimate: {} old vs {} new log-probabilities",
            old_logp.len(),
            new_logp.len()
        )));
    }
    if old_logp.is_empty() {
        return Err(Error::Contract("kl_estimate over zero samples".into()));
    }
    Ok(old_logp.iter().zip(new_logp).map(|(o, n)| o - n).sum::<f64>() / old_logp.len() as f64)
}

fn col(v: &[f64]) -> Tensor {
    Tensor::column(v)
}

pub fn ppo_clip_loss_values(new_logp: &[f64], old_logp: &[f64], adv: &[f64], clip: f64) -> Result<f64> {
    Ok(ppo_clip_loss(&mut Eval, &col(new_logp), &col(old_logp), &col(adv), clip)?.item())
}

pub fn entropy_loss_values(new_logp: &[f64], old_logp: &[f64]) -> Result<f64> {
    Ok(entropy_loss(&mut Eval, &col(new_logp), &col(old_logp))?.item())
}

pub fn compression_loss_values(x: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(compression_loss(&mut Eval, x, y)?.item())
}

pub fn value_loss_values(v_pred: &[f64], returns: &[f64]) -> Result<f64> {
    Ok(value_loss(&mut Eval, &col(v_pred), &col(returns))?.item())
}

pub fn total_policy_loss_values(ppo: f64, entropy: f64, compression: f64, cfg: &LossConfig) -> Result<f64> {
    let parts = LossParts { ppo: Tensor::scalar(ppo), entropy: Tensor::scalar(entropy), compression: Tensor::scalar(compression) };
    Ok(total_policy_loss(&mut Eval, &parts, cfg)?.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn ppo_examples() {
        assert!(close(ppo_clip_loss_values(&[-1.0], &[-1.0], &[2.0], 0.2).unwrap(), -2.0));
        let ln2 = 2f64.ln();
        assert!(close(ppo_clip_loss_values(&[ln2], &[0.0], &[1.0], 0.2).unwrap(), -1.2));
        assert!(close(ppo_clip_loss_values(&[-ln2], &[0.0], &[-1.0], 0.2).unwrap(), 0.8));
    }

    #[test]
    fn ppo_length_mismatch() {
        assert!(matches!(ppo_clip_loss_values(&[0.0, 1.0], &[0.0], &[1.0, 1.0], 0.2), Err(Error::Contract(_))));
    }

    #[test]
    fn entropy_examples() {
        assert!(close(entropy_loss_values(&[-1.0, -3.0], &[-1.0, -3.0]).unwrap(), -2.0));
        for o in [-4.0, 0.0, 1.7] {
            let v = entropy_loss_values(&[o + 2f64.ln()], &[o]).unwrap();
            assert!((v - 2.0 * (o + 2f64.ln())).abs() < 1e-12);
        }
        assert!(entropy_loss_values(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_estimate(&[-1.5, 2.0], &[-1.5, 2.0]).unwrap(), 0.0);
        assert!(close(kl_estimate(&[0.0, -1.0], &[-1.0, -1.0]).unwrap(), 0.5));
        assert!(kl_estimate(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn compression_examples() {
        let x = Tensor::from_rows(&[[0.3, -1.0]]).unwrap();
        assert_eq!(compression_loss_values(&x, &x).unwrap(), 0.0);
        assert_eq!(compression_loss_values(&Tensor::row(&[1.0]), &Tensor::row(&[0.0])).unwrap(), 1.0);
        assert_eq!(compression_loss_values(&Tensor::row(&[1.0, 0.0]), &Tensor::row(&[0.0, 0.0])).unwrap(), 0.5);
        assert!(compression_loss_values(&Tensor::row(&[1.0, 0.0]), &Tensor::row(&[0.0])).is_err());
    }

    #[test]
    fn total_examples() {
        let none = LossConfig { entropy_coef: 0.0, compression_coef: 0.0, ..LossConfig::default() };
        assert_eq!(total_policy_loss_values(0.7, 5.0, 9.0, &none).unwrap(), 0.7);
        let v = total_policy_loss_values(1.0, 2.0, 3.0, &LossConfig::default()).unwrap();
        assert!(close(v, 1.05));
    }

    #[test]
    fn value_examples() {
        assert_eq!(value_loss_values(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(value_loss_values(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(value_loss_values(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(value_loss_values(&[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn anchor_gradient_matches_unclipped_surrogate() {
        let logp = [-1.2, 0.4, -0.3, 2.0];
        let adv = [0.5, -1.0, 2.0, -0.1];
        let grad_of = |clipped: bool| {
            let mut t = Tape::new();
            let new = t.param(&Tensor::column(&logp));
            let old = t.constant(Tensor::column(&logp));
            let a = t.constant(Tensor::column(&adv));
            let loss = if clipped {
                ppo_clip_loss(&mut t, &new, &old, &a, 0.2).unwrap()
            } else {
                let r = ratio(&mut t, &new, &old).unwrap();
                let ra = t.mul(&r, &a).unwrap();
                let m = t.mean(&ra).unwrap();
                t.scale(&m, -1.0)
            };
            t.backward(loss).unwrap().wrt(new)
        };
        assert_eq!(grad_of(true), grad_of(false));
    }

    #[test]
    fn ratio_exponent_is_clamped() {
        let r = ratio(&mut Eval, &Tensor::column(&[1000.0]), &Tensor::column(&[0.0])).unwrap();
        assert_eq!(r.item(), 20f64.exp());
    }

    proptest! {
        #[test]
        fn compression_is_nonnegative(xs in prop::collection::vec(-10.0f64..10.0, 1..8), shift in -3.0f64..3.0) {
            let x = Tensor::row(&xs);
            let y = Tensor::row(&xs.iter().map(|v| v + shift).collect::<Vec<_>>());
            let c = compression_loss_values(&x, &y).unwrap();
            prop_assert!(c >= 0.0);
            prop_assert_eq!(c == 0.0, shift == 0.0);
        }

        #[test]
        fn losses_are_permutation_invariant(
            rows in prop::collection::vec((-3.0f64..0.0, -3.0f64..0.0, -2.0f64..2.0), 2..10),
            rot in 0usize..10,
        ) {
            let k = rot % rows.len();
            let mut perm = rows.clone();
            perm.rotate_left(k);
            let split = |r: &[(f64, f64, f64)]| {
                (r.iter().map(|v| v.0).collect::<Vec<_>>(), r.iter().map(|v| v.1).collect::<Vec<_>>(), r.iter().map(|v| v.2).collect::<Vec<_>>())
            };
            let (n1, o1, a1) = split(&rows);
            let (n2, o2, a2) = split(&perm);
            let tol = 1e-12;
            prop_assert!((ppo_clip_loss_values(&n1, &o1, &a1, 0.2).unwrap() - ppo_clip_loss_values(&n2, &o2, &a2, 0.2).unwrap()).abs() < tol);
            prop_assert!((entropy_loss_values(&n1, &o1).unwrap() - entropy_loss_values(&n2, &o2).unwrap()).abs() < tol);
            prop_assert!((kl_estimate(&o1, &n1).unwrap() - kl_estimate(&o2, &n2).unwrap()).abs() < tol);
            prop_assert!((value_loss_values(&n1, &a1).unwrap() - value_loss_values(&n2, &a2).unwrap()).abs() < tol);
        }
    }
}
