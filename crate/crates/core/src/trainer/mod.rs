//! Deterministic training loop: masked mini-batches, focal + DIoU objective,
//! global-norm clipping, AdamW and a parameter EMA used for evaluation.

mod optim;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{adamw_step, clip_grad_norm, clip_tensors, ema_decay_at, ema_update, AdamWConfig, AdamWState};
pub use synth::{generate_synthetic_dataset, SyntheticSpec};

use crate::error::{Error, Result};
use crate::losses::{total_loss, LossConfig};
use crate::model::{init_params, record_forward, ModelConfig, ModelParams};
use crate::numerics::SeqTensor;
use crate::targets::{assign_targets_masked, ActionInstance, AssignConfig};

/// One video: `T x D_in` clip features and its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVideo {
    pub id: String,
    pub features: SeqTensor,
    pub instances: Vec<ActionInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub optimizer: AdamWConfig,
    pub grad_clip_norm: f64,
    pub ema_decay: f64,
    /// Ramp the EMA decay as `(1 + step) / (10 + step)` early in training.
    pub ema_warmup: bool,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            optimizer: AdamWConfig::default(),
            grad_clip_norm: 1.0,
            ema_decay: 0.999,
            ema_warmup: true,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let opt = &self.optimizer;
        if !(opt.lr >= 0.0) || !opt.lr.is_finite() {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", opt.lr)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!(
                "ema_decay must lie in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "grad_clip_norm must be > 0, got {}",
                self.grad_clip_norm
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss of one (possibly padded) video and the parameter gradients.
#[derive(Clone, Debug)]
pub struct VideoGradients {
    pub loss: f64,
    pub grads: ModelParams,
}

/// Forward, loss and backward for one video padded to `padded_len` steps.
/// Padded moments are excluded from assignment and loss.
pub fn video_gradients(
    video: &LabeledVideo,
    padded_len: usize,
    params: &ModelParams,
    model: &ModelConfig,
    assign: &AssignConfig,
    loss: &LossConfig,
) -> Result<VideoGradients> {
    let valid = video.features.len();
    let x = video.features.padded_to(padded_len);
    let rec = record_forward(&x, valid, params, model)?;
    let lengths: Vec<usize> = rec.outputs().lengths();
    let assignment = assign_targets_masked(&video.instances, &lengths, &rec.valid, assign)?;
    let out = total_loss(&rec.outputs(), &assignment, loss)?;
    let grads = rec.backward(&out.logit_grads, &out.offset_grads);
    Ok(VideoGradients { loss: out.total, grads })
}

/// Mean loss and mean gradients over a batch, padded to the longest video.
/// Per-video passes run in parallel and are reduced in batch order.
pub fn batch_gradients(
    batch: &[&LabeledVideo],
    params: &ModelParams,
    model: &ModelConfig,
    assign: &AssignConfig,
    loss: &LossConfig,
) -> Result<(f64, ModelParams)> {
    let padded_len = batch.iter().map(|v| v.features.len()).max().unwrap_or(0);
    let per_video: Vec<Result<VideoGradients>> = batch
        .par_iter()
        .map(|v| video_gradients(v, padded_len, params, model, assign, loss))
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for r in per_video {
        let vg = r?;
        total += vg.loss;
        for (acc, g) in grads.leaves_mut().into_iter().zip(vg.grads.leaves()) {
            acc.add_assign(g);
        }
    }
    for g in grads.leaves_mut() {
        for v in g.as_mut_slice() {
            *v *= scale;
        }
    }
    Ok((total * scale, grads))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// EMA weights, used for evaluation.
    pub ema: ModelParams,
    /// Raw optimizer weights after the last step.
    pub last: ModelParams,
    /// Mean batch loss before each optimizer step.
    pub losses: Vec<f64>,
}

/// Runs `config.steps` optimizer steps from `init_params(model, seed)`.
pub fn train(
    dataset: &[LabeledVideo],
    model: &ModelConfig,
    config: &TrainConfig,
    assign: &AssignConfig,
    loss: &LossConfig,
) -> Result<TrainOutcome> {
    train_from(init_params(model, config.seed), dataset, model, config, assign, loss)
}

pub fn train_from(
    mut params: ModelParams,
    dataset: &[LabeledVideo],
    model: &ModelConfig,
    config: &TrainConfig,
    assign: &AssignConfig,
    loss: &LossConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    model.validate()?;
    config.validate()?;
    loss.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let mut state = AdamWState::new(&params);
    let mut ema = params.clone();
    let mut losses = Vec::with_capacity(config.steps);
    let batch_size = config.batch_size.min(dataset.len());
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&dataset[order[cursor]]);
            cursor += 1;
        }
        let (value, mut grads) = batch_gradients(&batch, &params, model, assign, loss)?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        losses.push(value);
        clip_grad_norm(&mut grads, config.grad_clip_norm);
        adamw_step(&mut params, &grads, &mut state, &config.optimizer)?;
        ema_update(
            &mut ema,
            &params,
            ema_decay_at(config.ema_decay, state.step, config.ema_warmup),
        );
    }
    Ok(TrainOutcome {
        ema,
        last: params,
        losses,
    })
}
