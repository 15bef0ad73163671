//! Temporal IoU and average precision with greedy highest-overlap matching.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::decode::{ranking_order, ScoredSegment};
use crate::targets::ActionInstance;

/// Intersection over union of two `[start, end]` intervals.
pub fn tiou(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let union = (a[1] - a[0]) + (b[1] - b[0]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Ground truth of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoGroundTruth {
    pub video_id: String,
    pub instances: Vec<ActionInstance>,
}

/// THUMOS convention: 0.3, 0.4, ..., 0.7.
pub fn default_thresholds() -> Vec<f64> {
    (3..=7).map(|i| i as f64 / 10.0).collect()
}

/// Single-class AP at one tIoU threshold. `gt` holds `(video_id, interval)`
/// pairs; returns `None` when there is no ground truth.
pub fn average_precision(predictions: &[ScoredSegment], gt: &[(String, [f64; 2])], threshold: f64) -> Option<f64> {
    if gt.is_empty() {
        return None;
    }
    let mut by_video: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, (vid, _)) in gt.iter().enumerate() {
        by_video.entry(vid.as_str()).or_default().push(i);
    }
    let mut order: Vec<&ScoredSegment> = predictions.iter().collect();
    order.sort_by(|a, b| ranking_order(a, b));

    let mut matched = vec![false; gt.len()];
    let mut hits = Vec::with_capacity(order.len());
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        if let Some(cands) = by_video.get(p.video_id.as_str()) {
            for &g in cands {
                if matched[g] {
                    continue;
                }
                let o = tiou(p.interval(), gt[g].1);
                if o >= threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
        }
        hits.push(best.is_some());
    }
    Some(interpolated_ap(&hits, gt.len()))
}

/// All-point interpolated area under the precision/recall curve of a
/// ranked hit list.
fn interpolated_ap(hits: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// Class id -> AP at each threshold, for classes present in the ground truth.
    pub per_class_ap: BTreeMap<usize, Vec<f64>>,
    pub map_per_threshold: Vec<f64>,
    pub average_map: f64,
    pub num_ground_truth: usize,
    pub num_predictions: usize,
}

/// Per-threshold mAP over classes present in the ground truth and their
/// mean over thresholds.
pub fn mean_ap(predictions: &[ScoredSegment], gt: &[VideoGroundTruth], thresholds: &[f64]) -> EvalReport {
    let mut gt_by_class: BTreeMap<usize, Vec<(String, [f64; 2])>> = BTreeMap::new();
    for v in gt {
        for inst in &v.instances {
            gt_by_class
                .entry(inst.label)
                .or_default()
                .push((v.video_id.clone(), [inst.start, inst.end]));
        }
    }
    let known: BTreeSet<&str> = gt.iter().map(|v| v.video_id.as_str()).collect();
    let mut preds_by_class: HashMap<usize, Vec<ScoredSegment>> = HashMap::new();
    for p in predictions.iter().filter(|p| known.contains(p.video_id.as_str())) {
        preds_by_class.entry(p.label).or_default().push(p.clone());
    }
    let empty = Vec::new();
    let per_class_ap: BTreeMap<usize, Vec<f64>> = gt_by_class
        .iter()
        .map(|(&c, g)| {
            let preds = preds_by_class.get(&c).unwrap_or(&empty);
            let aps = thresholds
                .iter()
                .map(|&th| average_precision(preds, g, th).expect("class has ground truth"))
                .collect();
            (c, aps)
        })
        .collect();
    let map_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|i| {
            if per_class_ap.is_empty() {
                0.0
            } else {
                per_class_ap.values().map(|aps| aps[i]).sum::<f64>() / per_class_ap.len() as f64
            }
        })
        .collect();
    let average_map = if map_per_threshold.is_empty() {
        0.0
    } else {
        map_per_threshold.iter().sum::<f64>() / map_per_threshold.len() as f64
    };
    EvalReport {
        thresholds: thresholds.to_vec(),
        per_class_ap,
        map_per_threshold,
        average_map,
        num_ground_truth: gt.iter().map(|v| v.instances.len()).sum(),
        num_predictions: predictions.len(),
    }
}
