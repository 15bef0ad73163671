//! Inference pipeline and the seeded TCM-variant / kernel-size experiments.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decode::{decode_predictions, DecodeConfig, ScoredSegment};
use super::metrics::{default_thresholds, mean_ap, EvalReport, VideoGroundTruth};
use super::nms::{suppress, NmsConfig};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{count_macs, init_params, model_forward, ModelConfig, ModelParams, TcmVariant};
use crate::numerics::SeqTensor;
use crate::targets::AssignConfig;
use crate::trainer::{generate_synthetic_dataset, train, LabeledVideo, SyntheticSpec, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub decode: DecodeConfig,
    pub nms: NmsConfig,
}

/// Forward, decode and suppress one video.
pub fn infer_video(
    features: &SeqTensor,
    video_id: &str,
    params: &ModelParams,
    model: &ModelConfig,
    config: &InferConfig,
) -> Result<Vec<ScoredSegment>> {
    let outputs = model_forward(features, params, model)?;
    let segments = decode_predictions(&outputs, video_id, &config.decode)?;
    suppress(&segments, &config.nms)
}

/// Predictions for every video, in input order.
pub fn infer_videos<'a>(
    videos: impl IntoParallelIterator<Item = (&'a str, &'a SeqTensor)>,
    params: &ModelParams,
    model: &ModelConfig,
    config: &InferConfig,
) -> Result<Vec<ScoredSegment>> {
    let per_video: Vec<Result<Vec<ScoredSegment>>> = videos
        .into_par_iter()
        .map(|(id, x)| infer_video(x, id, params, model, config))
        .collect();
    let mut out = Vec::new();
    for r in per_video {
        out.extend(r?);
    }
    Ok(out)
}

pub fn ground_truth(videos: &[LabeledVideo]) -> Vec<VideoGroundTruth> {
    videos
        .iter()
        .map(|v| VideoGroundTruth {
            video_id: v.id.clone(),
            instances: v.instances.clone(),
        })
        .collect()
}

/// Infers on `videos` and scores against their labels.
pub fn evaluate(
    videos: &[LabeledVideo],
    params: &ModelParams,
    model: &ModelConfig,
    infer: &InferConfig,
    thresholds: &[f64],
) -> Result<EvalReport> {
    let preds = infer_videos(
        videos.par_iter().map(|v| (v.id.as_str(), &v.features)),
        params,
        model,
        infer,
    )?;
    Ok(mean_ap(&preds, &ground_truth(videos), thresholds))
}

/// Seeded synthetic train/validation benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    /// `num_videos` is ignored; `seed` is offset by the run seed.
    pub data: SyntheticSpec,
    pub train_videos: usize,
    pub val_videos: usize,
    pub thresholds: Vec<f64>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            data: SyntheticSpec::default(),
            train_videos: 12,
            val_videos: 6,
            thresholds: default_thresholds(),
        }
    }
}

impl BenchmarkSpec {
    /// Train and validation videos drawn from one generator (shared class
    /// prototypes) for run seed `seed`.
    pub fn split(&self, seed: u64) -> Result<(Vec<LabeledVideo>, Vec<LabeledVideo>)> {
        if self.train_videos == 0 || self.val_videos == 0 {
            return Err(Error::Config(
                "benchmark needs at least one train and one val video".into(),
            ));
        }
        let spec = SyntheticSpec {
            num_videos: self.train_videos + self.val_videos,
            seed: self.data.seed.wrapping_add(seed),
            ..self.data.clone()
        };
        let mut videos = generate_synthetic_dataset(&spec)?;
        let val = videos.split_off(self.train_videos);
        Ok((videos, val))
    }
}

/// Everything except the model config and seed that a run needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSetup {
    pub benchmark: BenchmarkSpec,
    pub train: TrainConfig,
    pub assign: AssignConfig,
    pub loss: LossConfig,
    pub infer: InferConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    /// Row label: the variant name, or `maxpool-k<k>` in kernel sweeps.
    pub label: String,
    pub variant: TcmVariant,
    pub kernel: usize,
    pub seed: u64,
    pub average_map: f64,
    pub map_per_threshold: Vec<f64>,
    pub params: usize,
    pub macs: u64,
    pub final_loss: f64,
    /// Full per-step training loss history.
    #[serde(skip)]
    pub losses: Vec<f64>,
}

/// Trains on the seed's training split and evaluates EMA weights on the
/// validation split.
pub fn run_experiment(setup: &ExperimentSetup, model: &ModelConfig, seed: u64, label: &str) -> Result<RunRow> {
    let (train_set, val_set) = setup.benchmark.split(seed)?;
    let model = ModelConfig {
        input_dim: setup.benchmark.data.input_dim,
        num_classes: setup.benchmark.data.num_classes,
        ..model.clone()
    };
    let train_cfg = TrainConfig {
        seed,
        ..setup.train.clone()
    };
    let outcome = train(&train_set, &model, &train_cfg, &setup.assign, &setup.loss)?;
    let report = evaluate(
        &val_set,
        &outcome.ema,
        &model,
        &setup.infer,
        &setup.benchmark.thresholds,
    )?;
    Ok(RunRow {
        label: label.to_owned(),
        variant: model.tcm_variant,
        kernel: model.tcm_kernel,
        seed,
        average_map: report.average_map,
        map_per_threshold: report.map_per_threshold,
        params: init_params(&model, seed).count(),
        macs: count_macs(&model, setup.benchmark.data.length)?,
        final_loss: outcome.losses.last().copied().unwrap_or(f64::NAN),
        losses: outcome.losses,
    })
}

/// Seed statistics of one table label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub label: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub map_per_threshold: Vec<f64>,
    pub params: usize,
    pub macs: u64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultTable {
    pub thresholds: Vec<f64>,
    pub rows: Vec<RunRow>,
}

impl ResultTable {
    /// Labels in first-appearance order.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.label) {
                out.push(r.label.clone());
            }
        }
        out
    }

    pub fn aggregate(&self, label: &str) -> Option<Aggregate> {
        let rows: Vec<&RunRow> = self.rows.iter().filter(|r| r.label == label).collect();
        let first = rows.first()?;
        let n = rows.len() as f64;
        let maps: Vec<f64> = rows.iter().map(|r| r.average_map).collect();
        Some(Aggregate {
            label: label.to_owned(),
            mean: maps.iter().sum::<f64>() / n,
            min: maps.iter().copied().fold(f64::INFINITY, f64::min),
            max: maps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            map_per_threshold: (0..self.thresholds.len())
                .map(|i| rows.iter().map(|r| r.map_per_threshold[i]).sum::<f64>() / n)
                .collect(),
            params: first.params,
            macs: first.macs,
            seeds: rows.len(),
        })
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.labels().iter().filter_map(|l| self.aggregate(l)).collect()
    }

    /// Header `variant,seed,avg_map,map@<t>...,params,macs`; one row per
    /// run followed by `mean`, `min` and `max` rows per label.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,avg_map");
        for t in &self.thresholds {
            let _ = write!(s, ",map@{t:.2}");
        }
        s.push_str(",params,macs\n");
        for r in &self.rows {
            let _ = write!(s, "{},{},{:.6}", r.label, r.seed, r.average_map);
            for m in &r.map_per_threshold {
                let _ = write!(s, ",{m:.6}");
            }
            let _ = writeln!(s, ",{},{}", r.params, r.macs);
        }
        for a in self.aggregates() {
            for (tag, v) in [("mean", a.mean), ("min", a.min), ("max", a.max)] {
                let _ = write!(s, "{},{tag},{v:.6}", a.label);
                for m in &a.map_per_threshold {
                    if tag == "mean" {
                        let _ = write!(s, ",{m:.6}");
                    } else {
                        s.push(',');
                    }
                }
                let _ = writeln!(s, ",{},{}", a.params, a.macs);
            }
        }
        s
    }

    /// Aligned plain-text summary (mAP in percent).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<14} {:>5}", "TCM", "seeds");
        for t in &self.thresholds {
            let _ = write!(s, " {:>7}", format!("@{t:.1}"));
        }
        let _ = writeln!(s, " {:>7} {:>15} {:>10} {:>14}", "avg", "range", "params", "MACs");
        for a in self.aggregates() {
            let _ = write!(s, "{:<14} {:>5}", a.label, a.seeds);
            for m in &a.map_per_threshold {
                let _ = write!(s, " {:>7.2}", 100.0 * m);
            }
            let range = format!("[{:.2}, {:.2}]", 100.0 * a.min, 100.0 * a.max);
            let _ = writeln!(
                s,
                " {:>7.2} {:>15} {:>10} {:>14}",
                100.0 * a.mean,
                range,
                a.params,
                a.macs
            );
        }
        s
    }
}

fn run_grid(setup: &ExperimentSetup, jobs: Vec<(String, ModelConfig, u64)>) -> Result<ResultTable> {
    if jobs.is_empty() {
        return Err(Error::invalid(
            "experiment grid is empty (need at least one seed and one entry)",
        ));
    }
    let rows: Vec<Result<RunRow>> = jobs
        .par_iter()
        .map(|(label, model, seed)| run_experiment(setup, model, *seed, label))
        .collect();
    Ok(ResultTable {
        thresholds: setup.benchmark.thresholds.clone(),
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// Trains every TCM variant on the same splits for each seed.
pub fn run_ablation(
    setup: &ExperimentSetup,
    model: &ModelConfig,
    variants: &[TcmVariant],
    seeds: &[u64],
) -> Result<ResultTable> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let jobs = variants
        .iter()
        .flat_map(|&v| {
            seeds.iter().map(move |&s| {
                let cfg = ModelConfig {
                    tcm_variant: v,
                    ..model.clone()
                };
                (v.name().to_owned(), cfg, s)
            })
        })
        .collect();
    run_grid(setup, jobs)
}

/// Max-pooling model at each kernel size.
pub fn run_kernel_sweep(
    setup: &ExperimentSetup,
    model: &ModelConfig,
    kernels: &[usize],
    seeds: &[u64],
) -> Result<ResultTable> {
    if seeds.is_empty() {
        return Err(Error::invalid("kernel sweep needs at least one seed"));
    }
    let jobs = kernels
        .iter()
        .flat_map(|&k| {
            seeds.iter().map(move |&s| {
                let cfg = ModelConfig {
                    tcm_variant: TcmVariant::MaxPool,
                    tcm_kernel: k,
                    ..model.clone()
                };
                (format!("maxpool-k{k}"), cfg, s)
            })
        })
        .collect();
    run_grid(setup, jobs)
}
