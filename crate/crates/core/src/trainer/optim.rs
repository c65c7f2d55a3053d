use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl OptimizerConfig {
    pub fn with_lr(lr: f32) -> Self {
        OptimizerConfig { lr, ..Default::default() }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(weights: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: weights.iter().map(|w| vec![0.0; w.numel()]).collect(),
            v: weights.iter().map(|w| vec![0.0; w.numel()]).collect(),
        }
    }
}

/// One bias-corrected update of `weights` in place.
pub fn optimizer_step(
    weights: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &OptimizerConfig,
) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != state.m.len() {
        return Err(Error::contract(format!(
            "{} weights, {} gradients, {} moment slots",
            weights.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (w, g)) in weights.iter().zip(grads).enumerate() {
        if w.shape() != g.shape() || state.m[i].len() != w.numel() {
            return Err(Error::contract(format!(
                "weight {i} has shape {:?} but its gradient has {:?}",
                w.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c = config;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - c.lr * c.weight_decay;
    for (i, (w, g)) in weights.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (wj, &gj)) in w.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *wj = *wj * decay - c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(())
}
