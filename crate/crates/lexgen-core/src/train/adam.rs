//! Adam with bias correction and optional global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::model::ParamSet;
use crate::train::trainer::TrainConfig;
use crate::{LexError, Result};

/// First and second moment estimates, keyed like the parameter set.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One optimizer step. Gradients are validated (finite, complete, shaped
/// like their parameter), optionally clipped by global norm, then applied.
/// Returns the pre-clip global gradient norm for logging.
pub fn adam_step(
    params: &mut ParamSet<f64>,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr_t: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut sq_sum = 0.0;
    for (name, tensor) in params.iter() {
        let g = grads.get(name).ok_or_else(|| {
            LexError::Internal(format!("no gradient supplied for tensor '{name}'"))
        })?;
        if g.len() != tensor.numel() {
            return Err(LexError::Shape(format!(
                "gradient for '{name}' has {} elements, parameter has {}",
                g.len(),
                tensor.numel()
            )));
        }
        for &v in g {
            if !v.is_finite() {
                return Err(LexError::Internal(format!(
                    "non-finite gradient in tensor '{name}' at optimizer step {}",
                    state.t + 1
                )));
            }
            sq_sum += v * v;
        }
    }
    let norm = sq_sum.sqrt();
    let clip = match cfg.grad_clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };

    state.t += 1;
    let t = state.t;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t as i32);
    for (name, tensor) in params.iter_mut() {
        let g = &grads[name.as_str()];
        let n = tensor.numel();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let data = tensor.data_mut();
        for i in 0..n {
            let gi = g[i] * clip;
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * gi;
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr_t * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(norm)
}
