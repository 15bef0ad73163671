//! Feature directories: one `<video id>.tmxf` per video next to an
//! annotation document.

use std::fs;
use std::path::{Path, PathBuf};

use super::annotations::{AnnotationSet, VideoAnnotation};
use super::features::{read_feature_file, write_feature_file};
use crate::error::{Error, Result};
use crate::numerics::SeqTensor;
use crate::trainer::LabeledVideo;

pub const FEATURE_EXTENSION: &str = "tmxf";

pub fn feature_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.{FEATURE_EXTENSION}"))
}

/// Writes every video's features into `dir` and returns the matching
/// annotation set.
pub fn write_dataset(dir: &Path, videos: &[LabeledVideo], classes: Vec<String>) -> Result<AnnotationSet> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        write_feature_file(feature_path(dir, &v.id), &v.features)?;
        entries.push(VideoAnnotation {
            id: v.id.clone(),
            num_clips: v.features.len(),
            instances: v.instances.clone(),
        });
    }
    Ok(AnnotationSet::new(classes, entries))
}

/// Loads each annotated video's features from `dir`, checking clip counts
/// and a common feature width.
pub fn load_dataset(dir: &Path, annotations: &AnnotationSet) -> Result<Vec<LabeledVideo>> {
    let mut out: Vec<LabeledVideo> = Vec::with_capacity(annotations.videos.len());
    for v in &annotations.videos {
        let path = feature_path(dir, &v.id);
        let features = read_feature_file(&path)?;
        if features.len() != v.num_clips {
            return Err(Error::invalid(format!(
                "{}: {} clips but annotations declare num_clips = {}",
                path.display(),
                features.len(),
                v.num_clips
            )));
        }
        if let Some(first) = out.first() {
            if first.features.channels() != features.channels() {
                return Err(Error::invalid(format!(
                    "{}: feature width {} differs from {} in {}",
                    path.display(),
                    features.channels(),
                    first.features.channels(),
                    first.id
                )));
            }
        }
        out.push(LabeledVideo {
            id: v.id.clone(),
            features,
            instances: v.instances.clone(),
        });
    }
    Ok(out)
}

/// Every `*.tmxf` under `path` (or `path` itself when it is a file), sorted
/// by video id, which is the file stem.
pub fn list_feature_files(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let stem = |p: &Path| -> Result<String> {
        p.file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_owned)
            .ok_or_else(|| Error::invalid(format!("cannot derive a video id from {}", p.display())))
    };
    if path.is_file() {
        return Ok(vec![(stem(path)?, path.to_owned())]);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::io(format!("listing {}", path.display()), e))?;
    let mut out = Vec::new();
    for entry in entries {
        let p = entry
            .map_err(|e| Error::io(format!("listing {}", path.display()), e))?
            .path();
        if p.extension().and_then(|e| e.to_str()) == Some(FEATURE_EXTENSION) {
            out.push((stem(&p)?, p));
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_feature_files(path: &Path) -> Result<Vec<(String, SeqTensor)>> {
    list_feature_files(path)?
        .into_iter()
        .map(|(id, p)| Ok((id, read_feature_file(&p)?)))
        .collect()
}
