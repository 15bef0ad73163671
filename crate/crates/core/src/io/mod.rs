//! File formats and configuration.

mod annotations;
mod checkpoint;
mod config;
mod dataset;
mod features;

pub use annotations::{
    parse_annotations, parse_annotations_str, parse_predictions_str, read_predictions, write_annotations,
    write_predictions, AnnotationSet, PredictionFile, VideoAnnotation, ANNOTATION_VERSION, PREDICTION_VERSION,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{BenchmarkSection, EvalSection, PipelineConfig};
pub use dataset::{
    feature_path, list_feature_files, load_dataset, load_feature_files, write_dataset, FEATURE_EXTENSION,
};
pub use features::{
    decode_features, encode_features, read_feature_file, write_feature_file, FEATURE_HEADER_BYTES, FEATURE_MAGIC,
    FEATURE_VERSION,
};
