use serde::{Deserialize, Serialize};

use super::decode::{ranking_order, ScoredSegment};
use super::metrics::tiou;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmsMode {
    /// Gaussian score decay.
    Soft,
    /// Discard overlaps above `iou_threshold`.
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmsConfig {
    pub mode: NmsMode,
    pub sigma: f64,
    pub min_score: f64,
    pub iou_threshold: f64,
    /// Maximum detections kept per video.
    pub max_segments: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            mode: NmsMode::Soft,
            sigma: 0.5,
            min_score: 0.001,
            iou_threshold: 0.5,
            max_segments: 200,
        }
    }
}

/// Class-agnostic Gaussian Soft-NMS: repeatedly keep the best remaining
/// segment and decay every other score by `exp(-tiou^2 / sigma)`. Output
/// scores are non-increasing.
pub fn soft_nms(segments: &[ScoredSegment], sigma: f64, min_score: f64) -> Result<Vec<ScoredSegment>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("soft-NMS sigma must be > 0, got {sigma}")));
    }
    let mut pool: Vec<ScoredSegment> = segments.iter().filter(|s| s.score >= min_score).cloned().collect();
    let mut kept = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        let best = (0..pool.len())
            .min_by(|&a, &b| ranking_order(&pool[a], &pool[b]))
            .expect("pool is non-empty");
        let top = pool.swap_remove(best);
        for s in pool.iter_mut() {
            let o = tiou(top.interval(), s.interval());
            s.score *= (-(o * o) / sigma).exp();
        }
        pool.retain(|s| s.score >= min_score);
        kept.push(top);
    }
    Ok(kept)
}

/// Greedy hard NMS; kept segments overlap pairwise by at most `threshold`.
pub fn hard_nms(segments: &[ScoredSegment], threshold: f64) -> Vec<ScoredSegment> {
    let mut sorted = segments.to_vec();
    sorted.sort_by(ranking_order);
    let mut kept: Vec<ScoredSegment> = Vec::new();
    for s in sorted {
        if kept.iter().all(|k| tiou(k.interval(), s.interval()) <= threshold) {
            kept.push(s);
        }
    }
    kept
}

/// Suppression as configured, capped at `max_segments`.
pub fn suppress(segments: &[ScoredSegment], config: &NmsConfig) -> Result<Vec<ScoredSegment>> {
    let mut out = match config.mode {
        NmsMode::Soft => soft_nms(segments, config.sigma, config.min_score)?,
        NmsMode::Hard => hard_nms(segments, config.iou_threshold),
    };
    out.truncate(config.max_segments);
    Ok(out)
}
