use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadOutputs;

/// Segments at most this long are discarded.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-6;

/// Scored action segment in clip-grid units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredSegment {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub label: usize,
    pub score: f64,
}

impl ScoredSegment {
    pub fn interval(&self) -> [f64; 2] {
        [self.start, self.end]
    }
}

/// Descending score, then ascending start, end, label and video id.
pub fn ranking_order(a: &ScoredSegment, b: &ScoredSegment) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then(a.end.total_cmp(&b.end))
        .then(a.label.cmp(&b.label))
        .then_with(|| a.video_id.cmp(&b.video_id))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    pub pre_nms_topk: usize,
    /// Clip segments to `[0, T]` with `T` the level-0 length.
    pub clip_to_video: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            score_threshold: 0.001,
            pre_nms_topk: 2000,
            clip_to_video: true,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Turns per-moment outputs into scored segments: moment `t` of level `l`
/// sits at input coordinate `t * 2^l` and predicts
/// `[coord - 2^l * o_s, coord + 2^l * o_e]` for every class whose sigmoid
/// score exceeds the threshold.
pub fn decode_predictions(outputs: &HeadOutputs, video_id: &str, config: &DecodeConfig) -> Result<Vec<ScoredSegment>> {
    if !(0.0..=1.0).contains(&config.score_threshold) {
        return Err(Error::invalid(format!(
            "score threshold {} outside [0, 1]",
            config.score_threshold
        )));
    }
    let duration = outputs.levels.first().map_or(0.0, |l| l.logits.len() as f64);
    let mut segments = Vec::new();
    for (l, level) in outputs.levels.iter().enumerate() {
        let stride = (1usize << l) as f64;
        for t in 0..level.logits.len() {
            let coord = t as f64 * stride;
            let off = level.offsets.row(t);
            let mut start = coord - stride * off[0];
            let mut end = coord + stride * off[1];
            if config.clip_to_video {
                start = start.max(0.0);
                end = end.min(duration);
            }
            if end - start <= MIN_SEGMENT_LENGTH {
                continue;
            }
            for (label, &logit) in level.logits.row(t).iter().enumerate() {
                let score = sigmoid(logit);
                if score > config.score_threshold {
                    segments.push(ScoredSegment {
                        video_id: video_id.to_owned(),
                        start,
                        end,
                        label,
                        score,
                    });
                }
            }
        }
    }
    segments.sort_by(ranking_order);
    segments.truncate(config.pre_nms_topk);
    Ok(segments)
}
