use serde::{Deserialize, Serialize};

use super::tensor::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// First/second moment buffers, one per trainable parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One AdamW update with decoupled weight decay, applied to every trainable
/// parameter in order. `lr` overrides `cfg.lr` so callers can schedule it.
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, cfg: &AdamConfig, lr: f64) -> Result<()> {
    let trainable: Vec<&mut &mut Param> = params.iter_mut().filter(|p| p.trainable).collect();
    if state.m.is_empty() && state.step == 0 {
        state.m = trainable.iter().map(|p| vec![0.0; p.value.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != trainable.len()
        || trainable
            .iter()
            .zip(&state.m)
            .any(|(p, m)| p.value.len() != m.len() || p.grad.len() != m.len())
    {
        return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in trainable.into_iter().zip(&mut state.m).zip(&mut state.v) {
        let decay = 1.0 - lr * cfg.weight_decay;
        let grad = p.grad.data().to_vec();
        for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *w *= decay;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
