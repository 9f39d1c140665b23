use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

use super::{ParamGrads, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<S>>,
    pub v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, params: &ParamStore<S>) -> Self {
        let zeros: BTreeMap<_, _> = params.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update using `state.config.lr`.
pub fn adam_step<S: Scalar>(params: &mut ParamStore<S>, grads: &ParamGrads<S>, state: &mut AdamState<S>) -> Result<()> {
    for (name, p) in params.iter() {
        let (Some(g), Some(m)) = (grads.get(name), state.m.get(name)) else {
            return shape_err("adam", format!("no gradient or moment for `{name}`"));
        };
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return shape_err("adam", format!("`{name}`: param {:?}, grad {:?}", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = S::lit(1.0 - beta1.powi(t));
    let bc2 = S::lit(1.0 - beta2.powi(t));
    let (lr, b1, b2, eps) = (S::lit(lr), S::lit(beta1), S::lit(beta2), S::lit(eps));
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above").data();
        let m = state.m.get_mut(name).expect("checked above").data_mut();
        let v = state.v.get_mut(name).expect("checked above").data_mut();
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (S::one() - b1) * gi;
            *vi = b2 * *vi + (S::one() - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    fn grad(g: f64) -> ParamGrads<f64> {
        let mut grads = ParamGrads::zeros_like(&single(0.0));
        grads.insert("w", Tensor::scalar(g));
        grads
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = single(1.25);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &grad(0.0), &mut st).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.25]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [3.0, -0.02] {
            let mut p = single(0.0);
            let cfg = AdamConfig { eps: 1e-15, ..AdamConfig::default() };
            let mut st = AdamState::new(cfg, &p);
            adam_step(&mut p, &grad(g), &mut st).unwrap();
            let w = p.get("w").unwrap().data()[0];
            assert!((w + cfg.lr * g.signum()).abs() < 1e-12, "{w}");
        }
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let f = |w: f64| (w - 3.0) * (w - 3.0);
        let mut p = single(0.0);
        let mut st = AdamState::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &p);
        let mut prev = f(0.0);
        for _ in 0..10 {
            let w = p.get("w").unwrap().data()[0];
            adam_step(&mut p, &grad(2.0 * (w - 3.0)), &mut st).unwrap();
            let now = f(p.get("w").unwrap().data()[0]);
            assert!(now < prev, "{now} >= {prev}");
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = single(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let mut g = ParamGrads::zeros_like(&p);
        g.insert("w", Tensor::zeros(&[2, 2]));
        assert!(adam_step(&mut p, &g, &mut st).is_err());
    }
}
