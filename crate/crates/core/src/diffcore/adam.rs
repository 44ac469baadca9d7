//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::diffcore::{ParameterTree, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Applied as `θ ← θ − lr·wd·θ` after the adaptive step.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates plus step count for one parameter tree.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub m: ParameterTree<T>,
    pub v: ParameterTree<T>,
    pub config: AdamConfig,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParameterTree<T>, config: AdamConfig) -> Self {
        OptimizerState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            config,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut ParameterTree<T>,
    grads: &ParameterTree<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    params.check_congruent(grads)?;
    params.check_congruent(&state.m)?;
    params.check_congruent(&state.v)?;
    let cfg = state.config;
    if !(cfg.lr >= 0.0) || !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
        return Err(Error::Argument(format!("invalid Adam hyperparameters {cfg:?}")));
    }
    let step = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let lr = T::lit(cfg.lr);
    let decay = T::lit(cfg.lr * cfg.weight_decay);
    let (inv_bc1, inv_bc2) = (T::lit(1.0 / bc1), T::lit(1.0 / bc2));
    let eps = T::lit(cfg.eps);

    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let pd = p.tensor.data_mut();
        let gd = g.tensor.data();
        let md = m.tensor.data_mut();
        let vd = v.tensor.data_mut();
        for i in 0..pd.len() {
            let gi = gd[i];
            md[i] = b1 * md[i] + one_b1 * gi;
            vd[i] = b2 * vd[i] + one_b2 * gi * gi;
            let m_hat = md[i] * inv_bc1;
            let v_hat = vd[i] * inv_bc2;
            let adapted = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
            pd[i] = adapted - decay * adapted;
        }
    }
    state.step = step;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Role, Tensor};

    fn scalar_tree(v: f64) -> ParameterTree<f64> {
        let mut t = ParameterTree::new();
        t.insert("x", Role::Weight, Tensor::from_f64(&[1], &[v]).unwrap())
            .unwrap();
        t
    }

    /// Scalar Adam recurrence written out directly.
    fn scalar_adam(theta0: f64, grads: &[f64], cfg: AdamConfig) -> f64 {
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            theta -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            theta -= cfg.lr * cfg.weight_decay * theta;
        }
        theta
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_tree(0.5);
        let g = scalar_tree(1.0);
        let mut s = OptimizerState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s).unwrap();
        let delta = p.get("x").unwrap().data()[0] - 0.5;
        assert!((delta + 1e-3).abs() < 1e-10, "{delta}");
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar_tree(0.5);
        let g = scalar_tree(0.0);
        let mut s = OptimizerState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p.get("x").unwrap().data()[0], 0.5);
        assert_eq!(s.m.get("x").unwrap().data()[0], 0.0);
        assert_eq!(s.v.get("x").unwrap().data()[0], 0.0);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut p = scalar_tree(0.3);
        let g = scalar_tree(0.7);
        let mut s = OptimizerState::new(&p, cfg);
        adam_step(&mut p, &g, &mut s).unwrap();
        adam_step(&mut p, &g, &mut s).unwrap();
        let want = scalar_adam(0.3, &[0.7, 0.7], cfg);
        assert!((p.get("x").unwrap().data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let cfg = AdamConfig {
            lr: 0.0,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut p = scalar_tree(0.3);
        let before = p.clone();
        let mut s = OptimizerState::new(&p, cfg);
        adam_step(&mut p, &scalar_tree(4.0), &mut s).unwrap();
        assert!(p.bit_identical(&before));
    }

    #[test]
    fn mismatched_trees_are_rejected() {
        let mut p = scalar_tree(0.3);
        let mut g = ParameterTree::new();
        g.insert("y", Role::Weight, Tensor::zeros(&[1])).unwrap();
        let mut s = OptimizerState::new(&p, AdamConfig::default());
        assert!(matches!(adam_step(&mut p, &g, &mut s), Err(Error::Structure(_))));
        assert_eq!(s.step, 0);
    }
}
