//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 0.02, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for every tensor of one store, plus the step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdamWState<T> {
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn for_store(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.tensors().map(|t| vec![T::zero(); t.len()]).collect();
        Self { step: 0, first: zeros.clone(), second: zeros }
    }

    pub(crate) fn check(&self, store: &ParamStore<T>) -> Result<()> {
        let ok = self.first.len() == store.len()
            && self.second.len() == store.len()
            && store.tensors().zip(&self.first).zip(&self.second).all(|((t, a), b)| a.len() == t.len() && b.len() == t.len());
        if ok { Ok(()) } else { Err(shape_err("adamw", "optimizer state does not match parameter layout")) }
    }
}

/// One AdamW update. `grads[k]` is the gradient of tensor `k` of `store`.
///
/// `p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)` with bias-corrected moments.
pub fn optimizer_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Vec<T>],
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    state.check(store)?;
    if grads.len() != store.len() {
        return Err(shape_err("adamw", format!("{} gradients for {} tensors", grads.len(), store.len())));
    }
    for (id, g) in store.ids().zip(grads) {
        if g.len() != store.get(id).len() {
            return Err(shape_err("adamw", format!("gradient length mismatch for {}", store.name(id))));
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteGradient { name: store.name(id).to_string() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - T::lit(cfg.beta1.powi(t));
    let c2 = T::one() - T::lit(cfg.beta2.powi(t));
    let lr = T::lit(cfg.lr);
    let decay = T::lit(cfg.lr * cfg.weight_decay);
    let eps = T::lit(cfg.eps);
    for (((tensor, g), m), v) in store.tensors_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
        for (k, p) in tensor.values_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *p = *p - decay * *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
