//! Adam optimizer over lists of flat parameter tensors.
//!
//! The update is a pure function: it consumes parameter values, gradients and
//! the previous moment estimates and returns fresh copies, so callers can
//! keep (or serialize) any intermediate state and training stays trivially
//! reproducible.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state for tensors of the given lengths.
    pub fn new(lens: &[usize]) -> Self {
        AdamState {
            step: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam step over parallel lists of tensors. `names[i]` labels tensor `i`
/// in error messages. Returns updated parameters and state, leaving the
/// inputs untouched.
pub fn adam_step(
    params: &[Vec<f64>],
    grads: &[Vec<f64>],
    state: &AdamState,
    names: &[&str],
    cfg: &AdamConfig,
) -> Result<(Vec<Vec<f64>>, AdamState)> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != names.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: grads.len().max(state.m.len()).max(names.len()),
        });
    }

    let t = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);

    let mut new_params = Vec::with_capacity(params.len());
    let mut new_m = Vec::with_capacity(params.len());
    let mut new_v = Vec::with_capacity(params.len());

    for i in 0..params.len() {
        let (p, g) = (&params[i], &grads[i]);
        if p.len() != g.len() {
            return Err(Error::shape(format!(
                "parameter {:?} has {} values but gradient has {}",
                names[i],
                p.len(),
                g.len()
            )));
        }
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {:?} at index {k}", names[i])));
        }

        let (mut pm, mut pv, mut pp) = (state.m[i].clone(), state.v[i].clone(), p.clone());
        for k in 0..p.len() {
            pm[k] = cfg.beta1 * pm[k] + (1.0 - cfg.beta1) * g[k];
            pv[k] = cfg.beta2 * pv[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = pm[k] / bc1;
            let v_hat = pv[k] / bc2;
            pp[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        new_params.push(pp);
        new_m.push(pm);
        new_v.push(pv);
    }

    Ok((new_params, AdamState { step: t, m: new_m, v: new_v }))
}
