//! Center-sampled, scale-ranged assignment of ground-truth instances to
//! pyramid moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth segment `[start, end)` in clip-grid units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionInstance {
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

impl ActionInstance {
    pub fn new(start: f64, end: f64, label: usize) -> Self {
        ActionInstance { start, end, label }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite()) || self.start < 0.0 || self.start >= self.end {
            return Err(Error::invalid(format!(
                "instance [{}, {}) must satisfy 0 <= start < end",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignConfig {
    /// Center-sampling radius in units of the level stride.
    pub center_radius: f64,
    /// Per-level `[lo, hi)` bounds on `max(onset, offset)` in input steps.
    /// `None` selects `[0, 4), [4, 8), [8, 16), ...` with an open last level.
    pub regression_ranges: Option<Vec<[f64; 2]>>,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            center_radius: 1.5,
            regression_ranges: None,
        }
    }
}

impl AssignConfig {
    pub fn ranges(&self, num_levels: usize) -> Result<Vec<[f64; 2]>> {
        if let Some(r) = &self.regression_ranges {
            if r.len() != num_levels {
                return Err(Error::Config(format!(
                    "{} regression ranges given for {num_levels} levels",
                    r.len()
                )));
            }
            return Ok(r.clone());
        }
        Ok((0..num_levels)
            .map(|l| {
                let lo = if l == 0 { 0.0 } else { (1u64 << (l + 1)) as f64 };
                let hi = if l + 1 == num_levels {
                    f64::INFINITY
                } else {
                    (1u64 << (l + 2)) as f64
                };
                [lo, hi]
            })
            .collect())
    }
}

/// Assignment of one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTargets {
    /// Input steps per moment at this level.
    pub stride: usize,
    /// Moments `valid..` are padding and excluded from the loss.
    pub valid: usize,
    /// Target class of each moment, `None` for background.
    pub labels: Vec<Option<usize>>,
    /// `(onset, offset)` distances in input steps; zero for background.
    pub offsets: Vec<[f64; 2]>,
    /// Index of the matched instance.
    pub instance: Vec<Option<usize>>,
}

impl LevelTargets {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn coord(&self, t: usize) -> f64 {
        (t * self.stride) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetAssignment {
    pub levels: Vec<LevelTargets>,
}

impl TargetAssignment {
    /// `T_+`, positives over valid moments of all levels.
    pub fn num_positives(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.labels[..l.valid].iter().filter(|x| x.is_some()).count())
            .sum()
    }
}

/// Assigns every moment of every level, all moments valid.
pub fn assign_targets(
    instances: &[ActionInstance],
    level_lengths: &[usize],
    config: &AssignConfig,
) -> Result<TargetAssignment> {
    assign_targets_masked(instances, level_lengths, level_lengths, config)
}

/// Level `l` (0-based) has stride `2^l`; moment `t` sits at input
/// coordinate `t * 2^l`. Moments at or past `valid_lengths[l]` stay
/// background.
pub fn assign_targets_masked(
    instances: &[ActionInstance],
    level_lengths: &[usize],
    valid_lengths: &[usize],
    config: &AssignConfig,
) -> Result<TargetAssignment> {
    if level_lengths.len() != valid_lengths.len() {
        return Err(Error::invalid("level and valid length lists differ in size"));
    }
    if !(config.center_radius > 0.0) {
        return Err(Error::Config(format!(
            "center_radius must be > 0, got {}",
            config.center_radius
        )));
    }
    for inst in instances {
        inst.validate()?;
    }
    let ranges = config.ranges(level_lengths.len())?;
    let mut levels = Vec::with_capacity(level_lengths.len());
    for (l, (&len, &valid)) in level_lengths.iter().zip(valid_lengths).enumerate() {
        let stride = 1usize << l;
        let [lo, hi] = ranges[l];
        let radius = config.center_radius * stride as f64;
        let mut labels = vec![None; len];
        let mut offsets = vec![[0.0; 2]; len];
        let mut matched = vec![None; len];
        for t in 0..valid.min(len) {
            let coord = (t * stride) as f64;
            let mut best: Option<(usize, f64)> = None;
            for (n, inst) in instances.iter().enumerate() {
                let c = inst.center();
                let region_lo = (c - radius).max(inst.start);
                let region_hi = (c + radius).min(inst.end);
                if coord < region_lo || coord > region_hi {
                    continue;
                }
                let onset = coord - inst.start;
                let offset = inst.end - coord;
                if onset <= 0.0 || offset <= 0.0 {
                    continue;
                }
                let reach = onset.max(offset);
                if reach < lo || reach >= hi {
                    continue;
                }
                let dur = inst.duration();
                if best.is_none_or(|(_, d)| dur < d) {
                    best = Some((n, dur));
                }
            }
            if let Some((n, _)) = best {
                let inst = &instances[n];
                labels[t] = Some(inst.label);
                offsets[t] = [coord - inst.start, inst.end - coord];
                matched[t] = Some(n);
            }
        }
        levels.push(LevelTargets {
            stride,
            valid: valid.min(len),
            labels,
            offsets,
            instance: matched,
        });
    }
    Ok(TargetAssignment { levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_level(range: [f64; 2]) -> AssignConfig {
        AssignConfig {
            center_radius: 1.5,
            regression_ranges: Some(vec![range]),
        }
    }

    #[test]
    fn empty_video_is_all_background() {
        let a = assign_targets(&[], &[16, 8, 4], &AssignConfig::default()).unwrap();
        assert_eq!(a.num_positives(), 0);
        assert!(a.levels.iter().all(|l| l.labels.iter().all(Option::is_none)));
    }

    #[test]
    fn center_region_on_single_level() {
        let a = assign_targets(&[ActionInstance::new(2.0, 6.0, 1)], &[8], &single_level([0.0, 8.0])).unwrap();
        let pos: Vec<usize> = (0..8).filter(|&t| a.levels[0].labels[t].is_some()).collect();
        assert_eq!(pos, vec![3, 4, 5]);
        assert_eq!(a.levels[0].offsets[3], [1.0, 3.0]);
        assert_eq!(a.levels[0].labels[4], Some(1));
    }

    #[test]
    fn shorter_instance_wins() {
        let outer = ActionInstance::new(0.0, 10.0, 0);
        let inner = ActionInstance::new(3.0, 7.0, 1);
        let a = assign_targets(&[outer, inner], &[10], &single_level([0.0, 100.0])).unwrap();
        // Outer center region [3.5, 6.5], inner [3.5, 6.5]: 4, 5, 6 contested.
        for t in 4..=6 {
            assert_eq!(a.levels[0].instance[t], Some(1), "moment {t}");
        }
        assert_eq!(a.num_positives(), 3);
    }

    #[test]
    fn regression_range_filters_levels() {
        let inst = ActionInstance::new(10.0, 30.0, 0);
        let a = assign_targets(&[inst], &[64, 32, 16, 8], &AssignConfig::default()).unwrap();
        for lvl in &a.levels[..2] {
            assert!(lvl.labels.iter().all(Option::is_none));
        }
        let ranges = AssignConfig::default().ranges(4).unwrap();
        for (lvl, [lo, hi]) in a.levels.iter().zip(ranges) {
            for t in 0..lvl.len() {
                if lvl.labels[t].is_some() {
                    let [s, e] = lvl.offsets[t];
                    assert!(s > 0.0 && e > 0.0);
                    assert!(s.max(e) >= lo && s.max(e) < hi);
                }
            }
        }
        assert!(a.num_positives() > 0);
    }

    #[test]
    fn masked_moments_stay_background() {
        let inst = ActionInstance::new(1.0, 7.0, 0);
        let a = assign_targets_masked(&[inst], &[8], &[4], &single_level([0.0, 8.0])).unwrap();
        assert!(a.levels[0].labels[4..].iter().all(Option::is_none));
    }

    #[test]
    fn rejects_inverted_instance() {
        let bad = ActionInstance::new(5.0, 5.0, 0);
        assert!(assign_targets(&[bad], &[8], &AssignConfig::default()).is_err());
    }
}
