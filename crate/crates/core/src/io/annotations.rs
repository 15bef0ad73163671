//! JSON annotation and prediction documents.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ScoredSegment, VideoGroundTruth};
use crate::targets::ActionInstance;

pub const ANNOTATION_VERSION: u32 = 1;
pub const PREDICTION_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoAnnotation {
    pub id: String,
    /// Number of clips `T` of the video's feature sequence.
    pub num_clips: usize,
    pub instances: Vec<ActionInstance>,
}

/// Class names plus per-video ground truth in clip-grid units. Instance
/// labels index `classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSet {
    pub version: u32,
    pub classes: Vec<String>,
    pub videos: Vec<VideoAnnotation>,
}

impl AnnotationSet {
    pub fn new(classes: Vec<String>, videos: Vec<VideoAnnotation>) -> Self {
        AnnotationSet {
            version: ANNOTATION_VERSION,
            classes,
            videos,
        }
    }

    /// Checks version, unique ids, label range and `0 <= start < end <= T`.
    /// The error path names the offending field.
    pub fn validate(&self, origin: &str) -> Result<()> {
        let fail = |path: String, reason: String| Error::Schema {
            file: origin.to_owned(),
            path,
            reason,
        };
        if self.version != ANNOTATION_VERSION {
            return Err(fail(
                "version".into(),
                format!("unsupported version {}, expected {ANNOTATION_VERSION}", self.version),
            ));
        }
        if self.classes.is_empty() {
            return Err(fail("classes".into(), "class list is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (v, video) in self.videos.iter().enumerate() {
            if !seen.insert(video.id.as_str()) {
                return Err(fail(
                    format!("videos[{v}].id"),
                    format!("duplicate video id {:?}", video.id),
                ));
            }
            if video.num_clips == 0 {
                return Err(fail(format!("videos[{v}].num_clips"), "must be positive".into()));
            }
            let t = video.num_clips as f64;
            for (i, inst) in video.instances.iter().enumerate() {
                let at = |field: &str| format!("videos[{v}].instances[{i}].{field}");
                if !inst.start.is_finite() || inst.start < 0.0 {
                    return Err(fail(at("start"), format!("start {} must be >= 0", inst.start)));
                }
                if !inst.end.is_finite() || inst.start >= inst.end {
                    return Err(fail(
                        at("end"),
                        format!("end {} must exceed start {}", inst.end, inst.start),
                    ));
                }
                if inst.end > t {
                    return Err(fail(at("end"), format!("end {} exceeds num_clips {t}", inst.end)));
                }
                if inst.label >= self.classes.len() {
                    return Err(fail(
                        at("label"),
                        format!("label {} not in {} classes", inst.label, self.classes.len()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> Vec<VideoGroundTruth> {
        self.videos
            .iter()
            .map(|v| VideoGroundTruth {
                video_id: v.id.clone(),
                instances: v.instances.clone(),
            })
            .collect()
    }
}

fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        file: origin.to_owned(),
        path: e.path().to_string(),
        reason: e.inner().to_string(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable document");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn parse_annotations_str(text: &str, origin: &str) -> Result<AnnotationSet> {
    let set: AnnotationSet = parse_json(text, origin)?;
    set.validate(origin)?;
    Ok(set)
}

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    parse_annotations_str(&read_text(path)?, &path.display().to_string())
}

pub fn write_annotations(path: impl AsRef<Path>, set: &AnnotationSet) -> Result<()> {
    let path = path.as_ref();
    set.validate(&path.display().to_string())?;
    write_json(path, set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub version: u32,
    pub segments: Vec<ScoredSegment>,
}

fn validate_predictions(file: &PredictionFile, origin: &str) -> Result<()> {
    let fail = |path: String, reason: String| Error::Schema {
        file: origin.to_owned(),
        path,
        reason,
    };
    if file.version != PREDICTION_VERSION {
        return Err(fail(
            "version".into(),
            format!("unsupported version {}, expected {PREDICTION_VERSION}", file.version),
        ));
    }
    for (i, s) in file.segments.iter().enumerate() {
        if !(0.0..=1.0).contains(&s.score) {
            return Err(fail(
                format!("segments[{i}].score"),
                format!("score {} outside [0, 1]", s.score),
            ));
        }
        if !(s.start.is_finite() && s.end.is_finite()) || s.start >= s.end {
            return Err(fail(
                format!("segments[{i}].end"),
                format!("end {} must exceed start {}", s.end, s.start),
            ));
        }
    }
    Ok(())
}

pub fn parse_predictions_str(text: &str, origin: &str) -> Result<Vec<ScoredSegment>> {
    let file: PredictionFile = parse_json(text, origin)?;
    validate_predictions(&file, origin)?;
    Ok(file.segments)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<ScoredSegment>> {
    let path = path.as_ref();
    parse_predictions_str(&read_text(path)?, &path.display().to_string())
}

pub fn write_predictions(path: impl AsRef<Path>, segments: &[ScoredSegment]) -> Result<()> {
    let path = path.as_ref();
    let file = PredictionFile {
        version: PREDICTION_VERSION,
        segments: segments.to_vec(),
    };
    validate_predictions(&file, &path.display().to_string())?;
    write_json(path, &file)
}
