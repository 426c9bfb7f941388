//! Linear warm-up followed by cosine decay to zero.

use super::config::TrainConfig;
use crate::error::{CotError, Result};

/// Warm-up length in steps: ceil(warmup_ratio * total).
pub fn warmup_steps(cfg: &TrainConfig, total_steps: usize) -> usize {
    (cfg.warmup_ratio * total_steps as f64).ceil() as usize
}

/// Learning rate at `step` of a run with `total_steps` optimizer steps:
/// linear 0 -> peak over the warm-up, cosine peak -> 0 afterwards.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps < 1 {
        return Err(CotError::Range(format!(
            "total_steps {total_steps} must be at least 1"
        )));
    }
    if step > total_steps {
        return Err(CotError::Range(format!(
            "step {step} out of range 0..={total_steps}"
        )));
    }
    let peak = cfg.learning_rate;
    let warmup = warmup_steps(cfg, total_steps);
    if warmup > 0 && step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    if step >= total_steps {
        return Ok(0.0);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
