//! Shared oracles: finite-difference gradient checks and a brute-force AP.
#![allow(dead_code)]

pub mod cli;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmaxer::eval::{tiou, ScoredSegment};
use tmaxer::losses::{total_loss, LossConfig};
use tmaxer::model::{record_forward, ModelConfig, ModelParams};
use tmaxer::numerics::{GradTape, NodeId, SeqTensor};
use tmaxer::targets::{assign_targets_masked, ActionInstance, AssignConfig};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> SeqTensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    SeqTensor::from_vec(rows, cols, data).unwrap()
}

/// Like `rand_tensor` but every magnitude is at least `gap`, keeping
/// values away from ReLU kinks.
pub fn rand_tensor_away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64) -> SeqTensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    SeqTensor::from_vec(rows, cols, data).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn dot(a: &SeqTensor, b: &SeqTensor) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Worst relative error between tape gradients and central differences of
/// the scalar `sum(R * y)` with a fixed random projection `R`, over every
/// entry of every input.
pub fn fd_check_tape<F>(inputs: &[SeqTensor], seed: u64, build: F) -> f64
where
    F: Fn(&mut GradTape, &[NodeId]) -> NodeId,
{
    let run = |vals: &[SeqTensor]| {
        let mut tape = GradTape::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let y = build(&mut tape, &ids);
        (tape, ids, y)
    };
    let (tape, ids, y) = run(inputs);
    let out = tape.value(y).clone();
    let proj = rand_tensor(&mut rng(seed), out.len(), out.channels(), 1.0);
    let grads = tape.backward(&[(y, proj.clone())]);
    let scalar = |vals: &[SeqTensor]| {
        let (tape, _, y) = run(vals);
        dot(tape.value(y), &proj)
    };
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(ids[i], input);
        for j in 0..input.numel() {
            let mut vals = inputs.to_vec();
            vals[i].as_mut_slice()[j] += FD_STEP;
            let up = scalar(&vals);
            vals[i].as_mut_slice()[j] -= 2.0 * FD_STEP;
            let down = scalar(&vals);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.as_slice()[j], numeric));
        }
    }
    worst
}

/// Scalar training loss of one video padded to `padded_len`.
pub fn video_loss(
    x: &SeqTensor,
    padded_len: usize,
    instances: &[ActionInstance],
    params: &ModelParams,
    config: &ModelConfig,
) -> f64 {
    let rec = record_forward(&x.padded_to(padded_len), x.len(), params, config).unwrap();
    let out = rec.outputs();
    let assignment = assign_targets_masked(instances, &out.lengths(), &rec.valid, &AssignConfig::default()).unwrap();
    total_loss(&out, &assignment, &LossConfig::default()).unwrap().total
}

/// Worst relative error of analytic parameter gradients of the full loss
/// against central differences, over every parameter entry.
pub fn fd_check_model(x: &SeqTensor, instances: &[ActionInstance], params: &ModelParams, config: &ModelConfig) -> f64 {
    let rec = record_forward(x, x.len(), params, config).unwrap();
    let out = rec.outputs();
    let assignment = assign_targets_masked(instances, &out.lengths(), &rec.valid, &AssignConfig::default()).unwrap();
    let loss = total_loss(&out, &assignment, &LossConfig::default()).unwrap();
    let grads = rec.backward(&loss.logit_grads, &loss.offset_grads);
    let analytic = grads.flatten();
    let mut worst = 0.0f64;
    let mut k = 0;
    let n_leaves = params.leaves().len();
    for leaf in 0..n_leaves {
        let numel = params.leaves()[leaf].numel();
        for j in 0..numel {
            let mut p = params.clone();
            p.leaves_mut()[leaf].as_mut_slice()[j] += FD_STEP;
            let up = video_loss(x, x.len(), instances, &p, config);
            p.leaves_mut()[leaf].as_mut_slice()[j] -= 2.0 * FD_STEP;
            let down = video_loss(x, x.len(), instances, &p, config);
            worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * FD_STEP)));
            k += 1;
        }
    }
    worst
}

/// Independent AP: for each prefix of the ranked list compute precision and
/// recall from scratch, then integrate max-precision-at-recall >= r over
/// the distinct recall levels.
pub fn brute_force_ap(preds: &[ScoredSegment], gt: &[(String, [f64; 2])], threshold: f64) -> f64 {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&preds[a], &preds[b]);
        q.score
            .partial_cmp(&p.score)
            .unwrap()
            .then(p.start.partial_cmp(&q.start).unwrap())
            .then(p.end.partial_cmp(&q.end).unwrap())
            .then(p.label.cmp(&q.label))
            .then(p.video_id.cmp(&q.video_id))
    });
    let mut used = vec![false; gt.len()];
    let mut tp_flags = Vec::new();
    for &i in &order {
        let p = &preds[i];
        let mut best = None;
        let mut best_iou = -1.0;
        for (g, (vid, seg)) in gt.iter().enumerate() {
            if used[g] || *vid != p.video_id {
                continue;
            }
            let o = tiou([p.start, p.end], *seg);
            if o >= threshold && o > best_iou {
                best_iou = o;
                best = Some(g);
            }
        }
        if let Some(g) = best {
            used[g] = true;
        }
        tp_flags.push(best.is_some());
    }
    let points: Vec<(f64, f64)> = (1..=tp_flags.len())
        .map(|k| {
            let tp = tp_flags[..k].iter().filter(|&&f| f).count() as f64;
            (tp / gt.len() as f64, tp / k as f64)
        })
        .collect();
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let best = points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev) * best;
        prev = r;
    }
    ap
}

/// Random small AP problem: a few videos, ground truth on a coarse grid and
/// noisy predictions, some near-duplicates, all of one class.
pub fn random_ap_case(rng: &mut ChaCha8Rng) -> (Vec<ScoredSegment>, Vec<(String, [f64; 2])>) {
    let videos = rng.random_range(1..4);
    let mut gt = Vec::new();
    for v in 0..videos {
        for _ in 0..rng.random_range(0..4) {
            let s = rng.random_range(0..20) as f64;
            let d = rng.random_range(1..8) as f64;
            gt.push((format!("v{v}"), [s, s + d]));
        }
    }
    if gt.is_empty() {
        gt.push(("v0".to_string(), [0.0, 3.0]));
    }
    let mut preds = Vec::new();
    for _ in 0..rng.random_range(0..10) {
        let (vid, seg) = if !gt.is_empty() && rng.random_bool(0.7) {
            gt[rng.random_range(0..gt.len())].clone()
        } else {
            (format!("v{}", rng.random_range(0..videos)), [5.0, 9.0])
        };
        let s = seg[0] + rng.random_range(-2.0..2.0);
        let e = (seg[1] + rng.random_range(-2.0..2.0)).max(s + 0.5);
        preds.push(ScoredSegment {
            video_id: vid,
            start: s,
            end: e,
            label: 0,
            score: (rng.random_range(0..20) as f64) / 20.0,
        });
    }
    (preds, gt)
}
