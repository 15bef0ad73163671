//! Seeded synthetic clip-feature videos with exact action labels.
//!
//! Each video starts from a shared background prototype, every action span
//! is overwritten with its class prototype, per-clip Gaussian noise is
//! added, and the sequence is smoothed with a centered moving average so
//! adjacent clips are strongly correlated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledVideo;
use crate::error::{Error, Result};
use crate::numerics::SeqTensor;
use crate::targets::ActionInstance;

const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    /// Clips per video.
    pub length: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Inclusive `[min, max]` instances per video.
    pub instances_per_video: [usize; 2],
    pub min_duration: usize,
    pub max_duration: usize,
    pub prototype_scale: f64,
    pub noise_scale: f64,
    /// Moving-average width; 1 disables smoothing.
    pub smoothing: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_videos: 8,
            length: 128,
            input_dim: 16,
            num_classes: 3,
            instances_per_video: [2, 4],
            min_duration: 4,
            max_duration: 24,
            prototype_scale: 1.0,
            noise_scale: 0.6,
            smoothing: 5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.instances_per_video;
        if self.length == 0 || self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("length, input_dim and num_classes must be >= 1".into()));
        }
        if lo > hi {
            return Err(Error::Config(format!("instances_per_video [{lo}, {hi}] is empty")));
        }
        if self.min_duration < 2 || self.min_duration > self.max_duration {
            return Err(Error::Config(format!(
                "durations [{}, {}] must satisfy 2 <= min <= max",
                self.min_duration, self.max_duration
            )));
        }
        if self.max_duration > self.length {
            return Err(Error::Config(format!(
                "max_duration {} exceeds video length {}",
                self.max_duration, self.length
            )));
        }
        if !(self.noise_scale >= 0.0) || !(self.prototype_scale > 0.0) {
            return Err(Error::Config("noise_scale must be >= 0 and prototype_scale > 0".into()));
        }
        if self.smoothing == 0 {
            return Err(Error::Config("smoothing width must be >= 1".into()));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

fn place_instances(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, video: usize) -> Result<Vec<ActionInstance>> {
    let [lo, hi] = spec.instances_per_video;
    let count = rng.random_range(lo..=hi);
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let dur = rng.random_range(spec.min_duration..=spec.max_duration);
            let start = rng.random_range(0..=spec.length - dur);
            let end = start + dur;
            // One clip of background between instances.
            if spans.iter().all(|&(s, e)| end < s || start > e) {
                spans.push((start, end));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!(
                "video {video}: could not place {count} non-overlapping instances in {} clips after {PLACEMENT_ATTEMPTS} attempts",
                spec.length
            )));
        }
    }
    spans.sort_unstable();
    Ok(spans
        .into_iter()
        .map(|(s, e)| ActionInstance::new(s as f64, e as f64, rng.random_range(0..spec.num_classes)))
        .collect())
}

/// Centered moving average, window truncated at the borders.
fn smooth(x: &SeqTensor, width: usize) -> SeqTensor {
    if width <= 1 {
        return x.clone();
    }
    let half_lo = (width - 1) / 2;
    let half_hi = width / 2;
    let mut y = SeqTensor::zeros(x.len(), x.channels());
    for t in 0..x.len() {
        let lo = t.saturating_sub(half_lo);
        let hi = (t + half_hi).min(x.len() - 1);
        let n = (hi - lo + 1) as f64;
        let out = y.row_mut(t);
        for p in lo..=hi {
            for (o, v) in out.iter_mut().zip(x.row(p)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= n;
        }
    }
    y
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<LabeledVideo>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.input_dim;
    let background = gaussian_vec(&mut rng, d, spec.prototype_scale);
    let prototypes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| gaussian_vec(&mut rng, d, spec.prototype_scale))
        .collect();
    let mut videos = Vec::with_capacity(spec.num_videos);
    for v in 0..spec.num_videos {
        let instances = place_instances(&mut rng, spec, v)?;
        let mut x = SeqTensor::zeros(spec.length, d);
        for t in 0..spec.length {
            x.row_mut(t).copy_from_slice(&background);
        }
        for inst in &instances {
            for t in inst.start as usize..inst.end as usize {
                x.row_mut(t).copy_from_slice(&prototypes[inst.label]);
            }
        }
        if spec.noise_scale > 0.0 {
            for t in 0..spec.length {
                let noise = gaussian_vec(&mut rng, d, spec.noise_scale);
                for (o, n) in x.row_mut(t).iter_mut().zip(noise) {
                    *o += n;
                }
            }
        }
        videos.push(LabeledVideo {
            id: format!("video_{v:04}"),
            features: smooth(&x, spec.smoothing),
            instances,
        });
    }
    Ok(videos)
}
