//! Global-norm gradient clipping and AdamW with decoupled weight decay.

use crate::error::{CotError, Result};
use crate::tensorkit::{ParamSet, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
pub const WEIGHT_DECAY: f64 = 0.01;

/// Scale all trainable gradients so their global L2 norm is at most
/// `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(params: &mut ParamSet, max_norm: f64) -> Result<f64> {
    if max_norm <= 0.0 {
        return Err(CotError::Range(format!(
            "max_norm {max_norm} must be positive"
        )));
    }
    let mut sq = 0.0;
    for block in params.blocks() {
        if !block.trainable {
            continue;
        }
        for &g in block.grad.data() {
            if !g.is_finite() {
                return Err(CotError::NonFinite(format!(
                    "gradient of `{}` diverged",
                    block.name
                )));
            }
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for block in params.blocks_mut() {
            if !block.trainable {
                continue;
            }
            for g in block.grad.data_mut() {
                *g *= scale;
            }
        }
    }
    Ok(norm)
}

/// First and second moment estimates, one pair per ParamBlock, plus the
/// shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .blocks()
            .iter()
            .map(|b| Tensor::zeros(b.value.rows(), b.value.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One AdamW update over the trainable blocks with the default weight
/// decay. Frozen blocks and their moments are untouched.
pub fn adamw_step(params: &mut ParamSet, state: &mut AdamWState, lr: f64) -> Result<()> {
    adamw_step_wd(params, state, lr, WEIGHT_DECAY)
}

/// AdamW with an explicit decoupled weight decay.
pub fn adamw_step_wd(
    params: &mut ParamSet,
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(CotError::Config(format!(
            "optimizer state tracks {} blocks, params have {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (idx, block) in params.blocks_mut().iter_mut().enumerate() {
        if !block.trainable {
            continue;
        }
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        let grads = block.grad.data();
        for ((p, (&g, mi)), vi) in block
            .value
            .data_mut()
            .iter_mut()
            .zip(grads.iter().zip(m.iter_mut()))
            .zip(v.iter_mut())
        {
            if !g.is_finite() {
                return Err(CotError::NonFinite(format!(
                    "gradient of `{}` diverged",
                    block.name
                )));
            }
            *mi = BETA1 * *mi + (1.0 - BETA1) * g;
            *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + EPSILON) + weight_decay * *p);
        }
        if !block.value.all_finite() {
            return Err(CotError::NonFinite(format!(
                "parameter `{}` diverged",
                block.name
            )));
        }
    }
    Ok(())
}
