//! Decoding, suppression, tIoU-mAP scoring, diagnostics and experiment
//! harnesses.

mod decode;
mod diagnostics;
mod harness;
mod metrics;
mod nms;

pub use decode::{decode_predictions, ranking_order, DecodeConfig, ScoredSegment, MIN_SEGMENT_LENGTH};
pub use diagnostics::{cosine_similarity_matrix, mean_adjacent_similarity};
pub use harness::{
    evaluate, ground_truth, infer_video, infer_videos, run_ablation, run_experiment, run_kernel_sweep, Aggregate,
    BenchmarkSpec, ExperimentSetup, InferConfig, ResultTable, RunRow,
};
pub use metrics::{average_precision, default_thresholds, mean_ap, tiou, EvalReport, VideoGroundTruth};
pub use nms::{hard_nms, soft_nms, suppress, NmsConfig, NmsMode};
