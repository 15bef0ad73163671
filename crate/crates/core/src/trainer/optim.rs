use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::SeqTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: &ModelParams) -> Self {
        AdamWState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Adam with bias-corrected moments and decoupled weight decay:
/// `p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamWState,
    config: &AdamWConfig,
) -> Result<()> {
    for (name, g) in grads.named() {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let (b1, b2) = config.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let (lr, wd, eps) = (config.lr, config.weight_decay, config.eps);
    let grads = grads.leaves();
    let moments = state.m.leaves_mut().into_iter().zip(state.v.leaves_mut());
    for ((p, g), (m, v)) in params.leaves_mut().into_iter().zip(grads).zip(moments) {
        let it = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + eps);
            *p -= lr * wd * *p + lr * update;
        }
    }
    Ok(())
}

/// Rescales the tensors so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_tensors(tensors: &mut [&mut SeqTensor], max_norm: f64) -> f64 {
    let norm = tensors.iter().map(|t| t.sum_sq()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in tensors.iter_mut() {
            for v in t.as_mut_slice() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Global-norm gradient clipping over every parameter group.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    clip_tensors(&mut grads.leaves_mut(), max_norm)
}

/// `ema <- decay * ema + (1 - decay) * params`.
pub fn ema_update(ema: &mut ModelParams, params: &ModelParams, decay: f64) {
    for (e, p) in ema.leaves_mut().into_iter().zip(params.leaves()) {
        for (e, &p) in e.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *e = decay * *e + (1.0 - decay) * p;
        }
    }
}

/// Decay actually applied after optimizer step `step` (1-based). With
/// warmup the decay ramps as `(1 + step) / (10 + step)` until it reaches
/// `decay`.
pub fn ema_decay_at(decay: f64, step: u64, warmup: bool) -> f64 {
    if warmup {
        decay.min((1.0 + step as f64) / (10.0 + step as f64))
    } else {
        decay
    }
}
