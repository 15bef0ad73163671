//! Sigmoid focal classification loss, DIoU regression loss, and the
//! per-video objective normalized by the number of positives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadOutputs;
use crate::numerics::SeqTensor;
use crate::targets::TargetAssignment;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Target-class weight; `None` disables alpha weighting.
    pub focal_alpha: Option<f64>,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            focal_alpha: Some(0.25),
            focal_gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.focal_alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("focal_alpha must lie in [0, 1], got {a}")));
            }
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focal_gamma must be >= 0, got {}",
                self.focal_gamma
            )));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One-vs-all sigmoid focal loss summed over classes, with its gradient
/// with respect to the logits. `target = None` means background.
///
/// `log(p_t)` is evaluated as `-softplus(-z)` with `z = ±logit`, which
/// stays finite for arbitrarily confident logits.
pub fn focal_loss_grad(logits: &[f64], target: Option<usize>, alpha: Option<f64>, gamma: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &x) in logits.iter().enumerate() {
        let positive = target == Some(i);
        let (z, dz) = if positive { (x, 1.0) } else { (-x, -1.0) };
        let weight = match alpha {
            Some(a) if positive => a,
            Some(a) => 1.0 - a,
            None => 1.0,
        };
        // s = 1 - p_t, nll = -log(p_t)
        let s = sigmoid(-z);
        let nll = softplus(-z);
        let focus = if gamma == 0.0 { 1.0 } else { s.powf(gamma) };
        loss += weight * focus * nll;
        let d_dz = -weight * focus * (gamma * (1.0 - s) * nll + s);
        grad.push(d_dz * dz);
    }
    (loss, grad)
}

pub fn focal_loss(logits: &[f64], target: Option<usize>, alpha: Option<f64>, gamma: f64) -> f64 {
    focal_loss_grad(logits, target, alpha, gamma).0
}

/// DIoU loss between two segments `[start, end]`, with the gradient with
/// respect to the first segment's endpoints.
pub fn diou_segments_grad(pred: [f64; 2], target: [f64; 2]) -> (f64, [f64; 2]) {
    let [a1, b1] = pred;
    let [a2, b2] = target;
    let overlap = b1.min(b2) - a1.max(a2);
    let (inter, di_da, di_db) = if overlap > 0.0 {
        (
            overlap,
            if a1 > a2 { -1.0 } else { 0.0 },
            if b1 < b2 { 1.0 } else { 0.0 },
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    let union = (b1 - a1) + (b2 - a2) - inter;
    let du_da = -1.0 - di_da;
    let du_db = 1.0 - di_db;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let (diou_da, diou_db) = if union > 0.0 {
        (
            (di_da * union - inter * du_da) / (union * union),
            (di_db * union - inter * du_db) / (union * union),
        )
    } else {
        (0.0, 0.0)
    };
    let enclose = b1.max(b2) - a1.min(a2);
    let de_da = if a1 < a2 { -1.0 } else { 0.0 };
    let de_db = if b1 > b2 { 1.0 } else { 0.0 };
    let dist = 0.5 * (a1 + b1) - 0.5 * (a2 + b2);
    let (penalty, dp_da, dp_db) = if enclose > 0.0 {
        let e2 = enclose * enclose;
        let p = dist * dist / e2;
        let common = dist / e2;
        let shrink = 2.0 * dist * dist / (e2 * enclose);
        (p, common - shrink * de_da, common - shrink * de_db)
    } else {
        (0.0, 0.0, 0.0)
    };
    (1.0 - iou + penalty, [-diou_da + dp_da, -diou_db + dp_db])
}

pub fn diou_segments(pred: [f64; 2], target: [f64; 2]) -> f64 {
    diou_segments_grad(pred, target).0
}

/// DIoU loss for offsets `(onset, offset)` measured from `anchor`, with the
/// gradient with respect to the predicted offsets.
pub fn diou_loss_grad(pred: [f64; 2], target: [f64; 2], anchor: f64) -> (f64, [f64; 2]) {
    let p = [anchor - pred[0], anchor + pred[1]];
    let t = [anchor - target[0], anchor + target[1]];
    let (loss, [da, db]) = diou_segments_grad(p, t);
    (loss, [-da, db])
}

pub fn diou_loss(pred: [f64; 2], target: [f64; 2], anchor: f64) -> f64 {
    diou_loss_grad(pred, target, anchor).0
}

/// Loss of one video and its gradients with respect to the head outputs.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: f64,
    pub classification: f64,
    pub regression: f64,
    pub num_positives: usize,
    pub logit_grads: Vec<SeqTensor>,
    pub offset_grads: Vec<SeqTensor>,
}

/// `sum_t (L_cls + 1[pos] L_reg) / max(T_+, 1)` over the valid moments of
/// every level. Head offsets are in level-stride units and are scaled to
/// input steps before the DIoU term.
pub fn total_loss(outputs: &HeadOutputs, assignment: &TargetAssignment, config: &LossConfig) -> Result<LossOutput> {
    if outputs.levels.len() != assignment.levels.len() {
        return Err(Error::invalid(format!(
            "{} output levels but {} assignment levels",
            outputs.levels.len(),
            assignment.levels.len()
        )));
    }
    let num_positives = assignment.num_positives();
    let norm = 1.0 / num_positives.max(1) as f64;
    let mut cls_sum = 0.0;
    let mut reg_sum = 0.0;
    let mut logit_grads = Vec::with_capacity(outputs.levels.len());
    let mut offset_grads = Vec::with_capacity(outputs.levels.len());
    for (l, (out, tgt)) in outputs.levels.iter().zip(&assignment.levels).enumerate() {
        let (len, classes) = out.logits.shape();
        if out.offsets.shape() != (len, 2) || tgt.len() != len {
            return Err(Error::invalid(format!(
                "level {l}: output and assignment shapes disagree"
            )));
        }
        let stride = tgt.stride as f64;
        let mut dlogits = SeqTensor::zeros(len, classes);
        let mut doffsets = SeqTensor::zeros(len, 2);
        for t in 0..tgt.valid {
            let label = tgt.labels[t];
            if let Some(c) = label {
                if c >= classes {
                    return Err(Error::invalid(format!("label {c} outside {classes} classes")));
                }
            }
            let (cls, g) = focal_loss_grad(out.logits.row(t), label, config.focal_alpha, config.focal_gamma);
            cls_sum += cls;
            for (d, gv) in dlogits.row_mut(t).iter_mut().zip(&g) {
                *d = gv * norm;
            }
            if label.is_some() {
                let raw = out.offsets.row(t);
                let pred = [raw[0] * stride, raw[1] * stride];
                let (reg, [gs, ge]) = diou_loss_grad(pred, tgt.offsets[t], tgt.coord(t));
                reg_sum += reg;
                doffsets
                    .row_mut(t)
                    .copy_from_slice(&[gs * stride * norm, ge * stride * norm]);
            }
        }
        logit_grads.push(dlogits);
        offset_grads.push(doffsets);
    }
    Ok(LossOutput {
        total: (cls_sum + reg_sum) * norm,
        classification: cls_sum * norm,
        regression: reg_sum * norm,
        num_positives,
        logit_grads,
        offset_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_confident_prediction_vanishes() {
        let l = focal_loss(&[40.0, -40.0, -40.0], Some(0), Some(0.25), 2.0);
        assert!(l < 1e-12, "{l}");
        let l = focal_loss(&[-40.0, -40.0], None, Some(0.25), 2.0);
        assert!(l < 1e-12);
    }

    #[test]
    fn focal_reduces_to_bce() {
        let logits: [f64; 3] = [0.3, -1.2, 2.0];
        let bce: f64 = logits
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let p = 1.0 / (1.0 + (-x).exp());
                if i == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        let l = focal_loss(&logits, Some(1), None, 0.0);
        assert!((l - bce).abs() < 1e-12);
    }

    #[test]
    fn focal_closed_form() {
        let l = focal_loss(&[0.0], Some(0), Some(0.25), 2.0);
        assert!((l - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.04332).abs() < 1e-5);
    }

    #[test]
    fn diou_hand_cases() {
        assert!(diou_loss([2.0, 3.0], [2.0, 3.0], 5.0).abs() < 1e-15);
        assert!((diou_segments([0.0, 2.0], [4.0, 6.0]) - (1.0 + 16.0 / 36.0)).abs() < 1e-12);
        assert!((diou_segments([0.0, 4.0], [1.0, 3.0]) - 0.5).abs() < 1e-12);
        assert!((diou_loss([2.0, 2.0], [1.0, 1.0], 2.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diou_degenerate_prediction_has_zero_iou() {
        let l = diou_loss([0.0, 0.0], [2.0, 2.0], 5.0);
        assert!((l - 1.0).abs() < 1e-12);
    }
}
