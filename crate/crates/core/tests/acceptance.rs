//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use tempfile::TempDir;
use tmaxer::eval::{
    average_precision, evaluate, mean_adjacent_similarity, run_ablation, run_kernel_sweep, tiou, ExperimentSetup,
    InferConfig, ScoredSegment,
};
use tmaxer::io::{
    decode_checkpoint, decode_features, encode_checkpoint, encode_features, parse_annotations_str,
    parse_predictions_str, AnnotationSet, Checkpoint, PipelineConfig, PredictionFile, VideoAnnotation,
};
use tmaxer::losses::{diou_loss, diou_segments, focal_loss, total_loss, LossConfig};
use tmaxer::model::{
    count_macs, count_params, init_params, model_forward, HeadOutputs, LevelOutput, ModelConfig, TcmVariant,
};
use tmaxer::numerics::{SeqTensor, Window, LAYER_NORM_EPS};
use tmaxer::targets::{assign_targets, ActionInstance, AssignConfig};
use tmaxer::trainer::{generate_synthetic_dataset, train, SyntheticSpec, TrainConfig};

const PRIMITIVE_TOL: f64 = 1e-6;
const MODEL_TOL: f64 = 1e-5;
const AP_TOL: f64 = 1e-12;
const DIOU_TOL: f64 = 1e-9;
const FOCAL_TOL: f64 = 1e-5;
const PERFECT_LOSS_TOL: f64 = 1e-10;
const OVERFIT_MIN_MAP: f64 = 0.90;
const MIN_ADJACENT_SIMILARITY: f64 = 0.9;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tiny_config(variant: TcmVariant) -> ModelConfig {
    ModelConfig {
        input_dim: 4,
        embed_dim: 4,
        num_levels: 3,
        tcm_variant: variant,
        tcm_kernel: 3,
        num_classes: 2,
        head_kernel: 3,
    }
}

fn gradient_suite() -> Outcome {
    let mut r = rng(100);
    let mut worst_primitive = 0.0f64;
    for (len, cin, cout, k, stride) in [(8, 3, 2, 3, 1), (7, 2, 3, 3, 2), (8, 2, 2, 4, 2)] {
        let x = rand_tensor(&mut r, len, cin, 1.0);
        let w = rand_tensor(&mut r, cout, k * cin, 0.5);
        let b = rand_tensor(&mut r, 1, cout, 0.5);
        let window = if stride == 1 {
            Window::same(len, k).unwrap()
        } else {
            Window::downsample(len, k, stride).unwrap()
        };
        let e = fd_check_tape(&[x, w, b], 1, |t, ids| {
            t.conv1d(ids[0], ids[1], ids[2], window).unwrap()
        });
        worst_primitive = worst_primitive.max(e);
    }
    let ln = [
        rand_tensor(&mut r, 6, 5, 2.0),
        rand_tensor(&mut r, 1, 5, 1.0),
        rand_tensor(&mut r, 1, 5, 1.0),
    ];
    worst_primitive = worst_primitive.max(fd_check_tape(&ln, 2, |t, ids| {
        t.layer_norm(ids[0], ids[1], ids[2], LAYER_NORM_EPS).unwrap()
    }));
    let x = rand_tensor_away_from_zero(&mut r, 6, 3, 1e-2);
    worst_primitive = worst_primitive.max(fd_check_tape(&[x], 3, |t, ids| t.relu(ids[0])));
    for (len, k) in [(8, 3), (7, 3), (9, 4), (8, 1)] {
        let x = rand_tensor(&mut r, len, 3, 1.0);
        let w = Window::downsample(len, k, 2).unwrap();
        let checks = [
            fd_check_tape(std::slice::from_ref(&x), 4, |t, ids| t.maxpool(ids[0], w, len).unwrap()),
            fd_check_tape(std::slice::from_ref(&x), 5, |t, ids| t.avgpool(ids[0], w, len).unwrap()),
            fd_check_tape(std::slice::from_ref(&x), 6, |t, ids| t.subsample(ids[0], 2).unwrap()),
        ];
        worst_primitive = checks.into_iter().fold(worst_primitive, f64::max);
    }
    let mut attn = vec![rand_tensor(&mut r, 6, 3, 1.0)];
    attn.extend((0..4).map(|_| rand_tensor(&mut r, 3, 3, 0.7)));
    for stride in [1, 2] {
        worst_primitive = worst_primitive.max(fd_check_tape(&attn, 7, |t, ids| {
            t.attention(ids[0], [ids[1], ids[2], ids[3], ids[4]], stride, 6)
                .unwrap()
        }));
    }
    for (logits, target) in [(vec![0.3, -1.2, 2.0], Some(1)), (vec![-4.0, 0.7], None)] {
        let (_, g) = tmaxer::losses::focal_loss_grad(&logits, target, Some(0.25), 2.0);
        for j in 0..logits.len() {
            let (mut up, mut down) = (logits.clone(), logits.clone());
            up[j] += FD_STEP;
            down[j] -= FD_STEP;
            let n = (focal_loss(&up, target, Some(0.25), 2.0) - focal_loss(&down, target, Some(0.25), 2.0))
                / (2.0 * FD_STEP);
            worst_primitive = worst_primitive.max(rel_err(g[j], n));
        }
    }
    for (p, t) in [
        ([1.0, 4.0], [2.0, 6.0]),
        ([0.0, 2.0], [5.0, 9.0]),
        ([3.0, 5.0], [1.0, 10.0]),
    ] {
        let (_, g) = tmaxer::losses::diou_segments_grad(p, t);
        for j in 0..2 {
            let (mut up, mut down) = (p, p);
            up[j] += FD_STEP;
            down[j] -= FD_STEP;
            let n = (diou_segments(up, t) - diou_segments(down, t)) / (2.0 * FD_STEP);
            worst_primitive = worst_primitive.max(rel_err(g[j], n));
        }
    }

    let instances = [ActionInstance::new(0.5, 4.0, 0), ActionInstance::new(4.5, 8.0, 1)];
    let mut worst_model = 0.0f64;
    for variant in TcmVariant::ALL {
        let config = tiny_config(variant);
        let x = rand_tensor(&mut rng(22), 8, 4, 1.0);
        worst_model = worst_model.max(fd_check_model(&x, &instances, &init_params(&config, 21), &config));
    }
    let detail = format!("primitive max rel err {worst_primitive:.2e}, full model {worst_model:.2e}");
    ensure(worst_primitive < PRIMITIVE_TOL && worst_model < MODEL_TOL, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn pyramid_structure() -> Outcome {
    let level_lengths = |t: usize, levels: usize| -> Vec<usize> {
        let config = ModelConfig {
            num_levels: levels,
            ..tiny_config(TcmVariant::MaxPool)
        };
        let x = SeqTensor::filled(t, 4, 0.25);
        model_forward(&x, &init_params(&config, 0), &config).unwrap().lengths()
    };
    let got = level_lengths(16, 3);
    ensure(got == [16, 8, 4], || format!("T=16 L=3 gave {got:?}"))?;
    let mut r = rng(7);
    for _ in 0..20 {
        let levels = r.random_range(2..6);
        let t = r.random_range(1usize << (levels - 1)..200);
        let mut expected = vec![t];
        for _ in 1..levels {
            expected.push(expected.last().unwrap().div_ceil(2));
        }
        let got = level_lengths(t, levels);
        ensure(got == expected, || format!("T={t} L={levels}: {got:?} != {expected:?}"))?;
    }
    Ok("[16, 8, 4] and 20 random (T, L) pairs".into())
}

fn metric_oracle() -> Outcome {
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (preds, gt) = random_ap_case(&mut r);
        for th in [0.3, 0.5, 0.7] {
            let ap = average_precision(&preds, &gt, th).unwrap();
            worst = worst.max((ap - brute_force_ap(&preds, &gt, th)).abs());
        }
    }
    ensure(worst <= AP_TOL, || format!("AP deviates from oracle by {worst:e}"))?;
    for _ in 0..1000 {
        let a0 = r.random_range(-50.0..50.0);
        let a = [a0, a0 + r.random_range(0.01..30.0)];
        let b0 = r.random_range(-50.0..50.0);
        let b = [b0, b0 + r.random_range(0.01..30.0)];
        let o = tiou(a, b);
        ensure(o == tiou(b, a) && (0.0..=1.0).contains(&o), || {
            format!("tIoU({a:?}, {b:?}) = {o}")
        })?;
        ensure(tiou(a, a) == 1.0, || format!("tIoU({a:?}, itself) != 1"))?;
    }
    Ok(format!("200 AP cases, max deviation {worst:.1e}; 1000 tIoU pairs"))
}

fn loss_sanity() -> Outcome {
    let instances = [ActionInstance::new(2.0, 9.5, 0), ActionInstance::new(10.0, 15.0, 1)];
    let lengths = [16, 8, 4];
    let assignment = assign_targets(&instances, &lengths, &AssignConfig::default()).unwrap();
    let levels = assignment
        .levels
        .iter()
        .map(|level| {
            let mut logits = SeqTensor::filled(level.len(), 2, -40.0);
            let mut offsets = SeqTensor::filled(level.len(), 2, 1.0);
            for t in 0..level.len() {
                if let Some(label) = level.labels[t] {
                    logits.set(t, label, 40.0);
                    offsets.set(t, 0, level.offsets[t][0] / level.stride as f64);
                    offsets.set(t, 1, level.offsets[t][1] / level.stride as f64);
                }
            }
            LevelOutput { logits, offsets }
        })
        .collect();
    let perfect = total_loss(&HeadOutputs { levels }, &assignment, &LossConfig::default()).unwrap();
    ensure(perfect.num_positives > 0, || "no positives assigned".into())?;
    ensure(perfect.total < PERFECT_LOSS_TOL, || {
        format!("perfect loss {:e}", perfect.total)
    })?;

    let identical = diou_loss([2.0, 3.0], [2.0, 3.0], 5.0);
    let concentric = diou_segments([1.0, 3.0], [0.0, 4.0]);
    let disjoint = diou_segments([0.0, 2.0], [4.0, 6.0]);
    for (got, want) in [(identical, 0.0), (concentric, 0.5), (disjoint, 1.0 + 16.0 / 36.0)] {
        ensure((got - want).abs() < DIOU_TOL, || format!("DIoU {got} != {want}"))?;
    }
    let focal = focal_loss(&[0.0], Some(0), Some(0.25), 2.0);
    ensure((focal - 0.04332).abs() < FOCAL_TOL, || format!("focal {focal}"))?;
    Ok(format!(
        "perfect loss {:.1e}; DIoU {identical}, {concentric}, {disjoint:.4}; focal {focal:.5}",
        perfect.total
    ))
}

fn overfit() -> Outcome {
    let spec = SyntheticSpec {
        num_videos: 4,
        length: 64,
        input_dim: 16,
        num_classes: 2,
        seed: 11,
        ..Default::default()
    };
    let videos = generate_synthetic_dataset(&spec).map_err(|e| e.to_string())?;
    let model = ModelConfig {
        input_dim: 16,
        num_classes: 2,
        ..Default::default()
    };
    let config = TrainConfig {
        steps: 500,
        seed: 11,
        ..Default::default()
    };
    let outcome =
        train(&videos, &model, &config, &Default::default(), &Default::default()).map_err(|e| e.to_string())?;
    let thresholds = [0.3, 0.4, 0.5, 0.6, 0.7];
    let infer = InferConfig::default();
    let ema = evaluate(&videos, &outcome.ema, &model, &infer, &thresholds).map_err(|e| e.to_string())?;
    let last = evaluate(&videos, &outcome.last, &model, &infer, &thresholds).map_err(|e| e.to_string())?;
    let detail = format!(
        "training-set average mAP {:.4} (EMA), {:.4} (last weights) after 500 steps",
        ema.average_map, last.average_map
    );
    ensure(ema.average_map >= OVERFIT_MIN_MAP, || detail.clone())?;
    Ok(detail)
}

fn variant_ordering() -> Outcome {
    let setup = ExperimentSetup::default();
    let seeds: Vec<u64> = (0..5).collect();
    let (train_set, _) = setup.benchmark.split(0).map_err(|e| e.to_string())?;
    let similarity = train_set
        .iter()
        .map(|v| mean_adjacent_similarity(&v.features))
        .sum::<f64>()
        / train_set.len() as f64;
    ensure(similarity >= MIN_ADJACENT_SIMILARITY, || {
        format!("adjacent-clip similarity {similarity:.4}")
    })?;
    let table = run_ablation(&setup, &ModelConfig::default(), &TcmVariant::ALL, &seeds).map_err(|e| e.to_string())?;
    println!("{}", table.to_text());
    let mean = |v: TcmVariant| table.aggregate(v.name()).unwrap().mean;
    let (max, avg, sub, conv) = (
        mean(TcmVariant::MaxPool),
        mean(TcmVariant::AvgPool),
        mean(TcmVariant::Subsample),
        mean(TcmVariant::Conv),
    );
    let detail = format!(
        "seed means maxpool {:.2}, avgpool {:.2}, subsample {:.2}, conv {:.2}, attention {:.2}; similarity {similarity:.4}",
        100.0 * max,
        100.0 * avg,
        100.0 * sub,
        100.0 * conv,
        100.0 * mean(TcmVariant::Attention)
    );
    ensure(max >= avg && avg >= sub && max >= conv, || detail.clone())?;
    Ok(detail)
}

fn efficiency() -> Outcome {
    const LEN: usize = 2304;
    let mut lines = Vec::new();
    for (embed_dim, num_levels, tcm_kernel) in [(64, 4, 3), (128, 6, 3), (512, 6, 5), (32, 3, 1)] {
        let base = ModelConfig {
            embed_dim,
            num_levels,
            tcm_kernel,
            input_dim: 2048,
            num_classes: 20,
            ..Default::default()
        };
        let cfg = |v| ModelConfig {
            tcm_variant: v,
            ..base.clone()
        };
        let params = |v| count_params(&init_params(&cfg(v), 0));
        let macs = |v| count_macs(&cfg(v), LEN).unwrap();
        let p = params(TcmVariant::MaxPool);
        ensure(
            p == params(TcmVariant::AvgPool) && p == params(TcmVariant::Subsample),
            || format!("pooling params differ at D={embed_dim}"),
        )?;
        ensure(
            p < params(TcmVariant::Conv) && p < params(TcmVariant::Attention),
            || format!("maxpool params not smallest at D={embed_dim}"),
        )?;
        let m = macs(TcmVariant::MaxPool);
        ensure(m < macs(TcmVariant::Conv) && m < macs(TcmVariant::Attention), || {
            format!("maxpool MACs not below conv/attention at D={embed_dim}")
        })?;
        if embed_dim == 512 {
            lines.push(format!(
                "D=512: params {p} vs conv {} / attention {}; MACs {m} vs conv {} / attention {} (reference: 7.1M vs 30.5M params, 16.4 vs 45.6 GMACs)",
                params(TcmVariant::Conv),
                params(TcmVariant::Attention),
                macs(TcmVariant::Conv),
                macs(TcmVariant::Attention)
            ));
        }
    }
    Ok(lines.join("; "))
}

fn kernel_one_equivalence() -> Outcome {
    let spec = SyntheticSpec {
        num_videos: 4,
        length: 48,
        seed: 3,
        ..Default::default()
    };
    let videos = generate_synthetic_dataset(&spec).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        steps: 40,
        seed: 5,
        ..Default::default()
    };
    let run = |variant, kernel| {
        let model = ModelConfig {
            tcm_variant: variant,
            tcm_kernel: kernel,
            ..Default::default()
        };
        train(&videos, &model, &config, &Default::default(), &Default::default()).unwrap()
    };
    let pooled = run(TcmVariant::MaxPool, 1);
    let sub = run(TcmVariant::Subsample, 3);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&pooled.losses) == bits(&sub.losses), || {
        "loss trajectories differ".into()
    })?;
    ensure(bits(&pooled.last.flatten()) == bits(&sub.last.flatten()), || {
        "final weights differ".into()
    })?;
    ensure(bits(&pooled.ema.flatten()) == bits(&sub.ema.flatten()), || {
        "EMA weights differ".into()
    })?;
    Ok(format!(
        "40-step trajectories bit-identical (final loss {:.6})",
        pooled.losses[39]
    ))
}

fn round_trips() -> Outcome {
    let x = SeqTensor::from_vec(3, 2, vec![0.5, -1.25, 3.0, 0.0, 0.125, -7.5]).unwrap();
    let back = decode_features(&encode_features(&x).unwrap(), "mem").unwrap();
    ensure(back == x, || "feature file mismatch".into())?;

    let config = tiny_config(TcmVariant::Attention);
    let ckpt = Checkpoint {
        config: config.clone(),
        params: init_params(&config, 9),
    };
    let bytes = encode_checkpoint(&ckpt).unwrap();
    let back = decode_checkpoint(&bytes, "mem").unwrap();
    ensure(back == ckpt && encode_checkpoint(&back).unwrap() == bytes, || {
        "checkpoint mismatch".into()
    })?;

    let set = AnnotationSet::new(
        vec!["a".into(), "b".into()],
        vec![VideoAnnotation {
            id: "v0".into(),
            num_clips: 20,
            instances: vec![ActionInstance::new(0.1, 3.7, 1), ActionInstance::new(5.0, 19.9, 0)],
        }],
    );
    let text = serde_json::to_string(&set).unwrap();
    ensure(parse_annotations_str(&text, "mem").unwrap() == set, || {
        "annotation mismatch".into()
    })?;

    let segments = vec![ScoredSegment {
        video_id: "v0".into(),
        start: 0.1 + 0.2,
        end: 7.0 / 3.0,
        label: 1,
        score: 0.123456789,
    }];
    let text = serde_json::to_string(&PredictionFile {
        version: 1,
        segments: segments.clone(),
    })
    .unwrap();
    ensure(parse_predictions_str(&text, "mem").unwrap() == segments, || {
        "prediction mismatch".into()
    })?;

    let cfg = PipelineConfig::default().with_seed(Some(4));
    let back = PipelineConfig::from_toml_str(&cfg.to_toml_string(), "mem").unwrap();
    ensure(back == cfg, || "config mismatch".into())?;

    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (ra, rb) = (cli::pipeline(a.path()), cli::pipeline(b.path()));
    let (sa, sb) = (cli::snapshot(a.path()), cli::snapshot(b.path()));
    ensure(ra == rb && sa == sb, || {
        "CLI pipeline outputs differ between runs".into()
    })?;
    Ok(format!(
        "features, checkpoint, annotations, predictions, config; CLI pipeline identical over {} files",
        sa.len()
    ))
}

fn kernel_sweep() -> Outcome {
    let setup = ExperimentSetup::default();
    let table = run_kernel_sweep(&setup, &ModelConfig::default(), &[3, 4, 5, 6], &[0, 1]).map_err(|e| e.to_string())?;
    let text = table.to_text();
    println!("{text}");
    let csv = table.to_csv();
    for k in 3..=6 {
        let label = format!("maxpool-k{k}");
        ensure(csv.contains(&label) && text.contains(&label), || {
            format!("{label} missing from table")
        })?;
    }
    let means: Vec<String> = table
        .aggregates()
        .iter()
        .map(|a| format!("{} {:.2}", a.label, 100.0 * a.mean))
        .collect();
    Ok(format!(
        "2 seeds: {} (reference k=3 average mAP 67.7)",
        means.join(", ")
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient suite", Duration::from_secs(30), gradient_suite),
        ("pyramid structure", Duration::from_secs(1), pyramid_structure),
        ("metric oracle", Duration::from_secs(10), metric_oracle),
        ("loss sanity", Duration::from_secs(1), loss_sanity),
        ("overfit", Duration::from_secs(180), overfit),
        ("TCM variant ordering", Duration::from_secs(1200), variant_ordering),
        ("efficiency accounting", Duration::from_secs(1), efficiency),
        ("kernel-1 equivalence", Duration::from_secs(60), kernel_one_equivalence),
        ("round trip and determinism", Duration::from_secs(60), round_trips),
        ("kernel sweep", Duration::from_secs(600), kernel_sweep),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over budget {budget:?}")),
            other => other,
        };
        let (status, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {} ({name}): {status} ({detail}; {:.2} s)",
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
