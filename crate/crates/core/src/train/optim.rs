use crate::error::{GeomemError, Result};
use crate::models::ParamSet;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: usize,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .tensors
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// Linear warm-up from 0 to `peak` over `warmup` steps, then cosine decay to
/// 0 at `total`.
pub fn cosine_with_warmup(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    let step = step.min(total);
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// One AdamW update with bias correction and decoupled weight decay.
/// Frozen tensors are skipped entirely, decay included. `step` is only used
/// to label numeric errors.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    step: usize,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(GeomemError::Shape {
            op: "adamw_step",
            left: (params.len(), 1),
            right: (grads.len(), 1),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensors[i].shape() {
            return Err(GeomemError::Shape {
                op: "adamw_step",
                left: params.tensors[i].shape(),
                right: g.shape(),
            });
        }
        if !params.frozen[i] && !g.is_finite() {
            return Err(GeomemError::Numeric {
                step,
                what: format!("non-finite gradient for `{}`", params.names[i]),
            });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    let decay = 1.0 - lr * weight_decay;
    for (i, g) in grads.iter().enumerate() {
        if params.frozen[i] {
            continue;
        }
        let p = params.tensors[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k];
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p[k] = p[k] * decay - lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
