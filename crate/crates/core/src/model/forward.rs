//! Encoder (projection + pyramid) and shared heads, recorded on a tape.

use super::config::{ModelConfig, TcmVariant, PROJECTION_KERNEL};
use super::params::{ConvBlock, ConvParams, ModelParams, NormParams, ParamTree, TcmParams};
use crate::error::{Error, Result};
use crate::numerics::{GradTape, NodeId, SeqTensor, Window, LAYER_NORM_EPS};

/// Latent sequences `Z^1..Z^L`, each with `D` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<SeqTensor>,
}

impl FeaturePyramid {
    pub fn lengths(&self) -> Vec<usize> {
        self.levels.iter().map(SeqTensor::len).collect()
    }
}

/// Head outputs of one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelOutput {
    /// `len x C` classification logits.
    pub logits: SeqTensor,
    /// `len x 2` nonnegative `(onset, offset)` distances in units of the
    /// level stride `2^l`; multiply by the stride for input time steps.
    pub offsets: SeqTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub levels: Vec<LevelOutput>,
}

impl HeadOutputs {
    pub fn lengths(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.logits.len()).collect()
    }
}

/// Tape handles of a recorded forward pass.
#[derive(Debug)]
pub struct RecordedForward {
    pub tape: GradTape,
    pub params: ParamTree<NodeId>,
    pub input: NodeId,
    pub pyramid: Vec<NodeId>,
    pub logits: Vec<NodeId>,
    pub offsets: Vec<NodeId>,
    /// Unpadded length of every level.
    pub valid: Vec<usize>,
}

impl RecordedForward {
    pub fn outputs(&self) -> HeadOutputs {
        HeadOutputs {
            levels: self
                .logits
                .iter()
                .zip(&self.offsets)
                .map(|(&c, &o)| LevelOutput {
                    logits: self.tape.value(c).clone(),
                    offsets: self.tape.value(o).clone(),
                })
                .collect(),
        }
    }

    pub fn pyramid(&self) -> FeaturePyramid {
        FeaturePyramid {
            levels: self.pyramid.iter().map(|&id| self.tape.value(id).clone()).collect(),
        }
    }

    /// Backpropagates seeds on the head outputs into per-parameter gradients.
    pub fn backward(&self, logit_grads: &[SeqTensor], offset_grads: &[SeqTensor]) -> ModelParams {
        let seeds: Vec<(NodeId, SeqTensor)> = self
            .logits
            .iter()
            .copied()
            .zip(logit_grads.iter().cloned())
            .chain(self.offsets.iter().copied().zip(offset_grads.iter().cloned()))
            .collect();
        let grads = self.tape.backward(&seeds);
        self.params.map(|&id| grads.get_or_zeros(id, self.tape.value(id)))
    }
}

struct Recorder<'a> {
    tape: GradTape,
    ids: ParamTree<NodeId>,
    config: &'a ModelConfig,
}

impl Recorder<'_> {
    fn mask(&mut self, x: NodeId, valid: usize) -> NodeId {
        if valid >= self.tape.value(x).len() {
            x
        } else {
            self.tape.mask_rows(x, valid)
        }
    }

    fn conv_same(&mut self, x: NodeId, conv: &ConvParams<NodeId>, kernel: usize) -> Result<NodeId> {
        let window = Window::same(self.tape.value(x).len(), kernel)?;
        self.tape.conv1d(x, conv.weight, conv.bias, window)
    }

    fn norm(&mut self, x: NodeId, norm: &NormParams<NodeId>) -> Result<NodeId> {
        self.tape.layer_norm(x, norm.gamma, norm.beta, LAYER_NORM_EPS)
    }

    /// Conv -> layer norm -> ReLU, rows past `valid` zeroed.
    fn block(&mut self, x: NodeId, block: &ConvBlock<NodeId>, kernel: usize, valid: usize) -> Result<NodeId> {
        let y = self.conv_same(x, &block.conv, kernel)?;
        let y = self.norm(y, &block.norm)?;
        let y = self.tape.relu(y);
        Ok(self.mask(y, valid))
    }

    fn project(&mut self, x: NodeId, valid: usize) -> Result<NodeId> {
        let proj = self.ids.projection.clone();
        let y = self.block(x, &proj[0], PROJECTION_KERNEL, valid)?;
        self.block(y, &proj[1], PROJECTION_KERNEL, valid)
    }

    fn tcm(&mut self, level: usize, x: NodeId, valid: usize) -> Result<NodeId> {
        let len = self.tape.value(x).len();
        let k = self.config.tcm_kernel;
        let out_valid = valid.div_ceil(2);
        let y = match self.config.tcm_variant {
            TcmVariant::MaxPool => self.tape.maxpool(x, Window::downsample(len, k, 2)?, valid)?,
            TcmVariant::AvgPool => self.tape.avgpool(x, Window::downsample(len, k, 2)?, valid)?,
            TcmVariant::Subsample => self.tape.subsample(x, 2)?,
            TcmVariant::Conv => {
                let TcmParams::Conv(conv) = self.ids.tcm[level].clone() else {
                    return Err(Error::invalid("conv variant requires conv TCM parameters"));
                };
                self.tape
                    .conv1d(x, conv.weight, conv.bias, Window::downsample(len, k, 2)?)?
            }
            TcmVariant::Attention => {
                let TcmParams::Attention { wq, wk, wv, wo, norm } = self.ids.tcm[level].clone() else {
                    return Err(Error::invalid("attention variant requires attention TCM parameters"));
                };
                let r = self.tape.attention(x, [wq, wk, wv, wo], 2, valid)?;
                self.norm(r, &norm)?
            }
        };
        Ok(self.mask(y, out_valid))
    }

    fn heads(&mut self, z: NodeId, valid: usize) -> Result<(NodeId, NodeId)> {
        let hk = self.config.head_kernel;
        let ids = self.ids.clone();
        let c = self.block(z, &ids.cls_tower[0], hk, valid)?;
        let c = self.block(c, &ids.cls_tower[1], hk, valid)?;
        let logits = self.conv_same(c, &ids.cls_out, hk)?;
        let r = self.block(z, &ids.reg_tower[0], hk, valid)?;
        let r = self.block(r, &ids.reg_tower[1], hk, valid)?;
        let r = self.conv_same(r, &ids.reg_out, hk)?;
        let offsets = self.tape.relu(r);
        Ok((logits, offsets))
    }
}

fn check_params(params: &ModelParams, config: &ModelConfig) -> Result<()> {
    let expected = if config.tcm_variant.is_parametric() {
        config.num_levels - 1
    } else {
        0
    };
    if params.tcm.len() != expected {
        return Err(Error::invalid(format!(
            "{} TCM parameter sets for variant {} with {} levels (expected {expected})",
            params.tcm.len(),
            config.tcm_variant,
            config.num_levels
        )));
    }
    let d_in = params.projection[0].conv.weight.channels() / PROJECTION_KERNEL;
    if d_in != config.input_dim || params.projection[0].conv.weight.len() != config.embed_dim {
        return Err(Error::invalid("parameters do not match the model config"));
    }
    Ok(())
}

fn check_input(x: &SeqTensor, config: &ModelConfig) -> Result<()> {
    if x.channels() != config.input_dim {
        return Err(Error::invalid(format!(
            "input has {} channels, model expects {}",
            x.channels(),
            config.input_dim
        )));
    }
    if x.len() < config.min_length() {
        return Err(Error::invalid(format!(
            "input of length {} too short for {} pyramid levels (need >= {})",
            x.len(),
            config.num_levels,
            config.min_length()
        )));
    }
    Ok(())
}

/// Records the full forward pass. Rows `valid_len..` of `x` are padding:
/// they are excluded from pooling windows and attention keys and every
/// intermediate is zeroed there.
pub fn record_forward(
    x: &SeqTensor,
    valid_len: usize,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<RecordedForward> {
    config.validate()?;
    check_params(params, config)?;
    check_input(x, config)?;
    if valid_len == 0 || valid_len > x.len() {
        return Err(Error::invalid(format!(
            "valid length {valid_len} outside 1..={}",
            x.len()
        )));
    }
    if valid_len < config.min_length() {
        return Err(Error::invalid(format!(
            "valid length {valid_len} too short for {} pyramid levels",
            config.num_levels
        )));
    }
    let mut tape = GradTape::new();
    let ids = params.map(|t| tape.leaf(t.clone()));
    let input = tape.leaf(x.clone());
    let mut rec = Recorder { tape, ids, config };

    let mut valid = vec![valid_len];
    let mut pyramid = vec![rec.project(input, valid_len)?];
    for level in 1..config.num_levels {
        let prev_valid = valid[level - 1];
        let z = rec.tcm(level - 1, pyramid[level - 1], prev_valid)?;
        pyramid.push(z);
        valid.push(prev_valid.div_ceil(2));
    }
    let mut logits = Vec::with_capacity(pyramid.len());
    let mut offsets = Vec::with_capacity(pyramid.len());
    for (level, &z) in pyramid.iter().enumerate() {
        let (c, o) = rec.heads(z, valid[level])?;
        logits.push(c);
        offsets.push(o);
    }
    Ok(RecordedForward {
        tape: rec.tape,
        params: rec.ids,
        input,
        pyramid,
        logits,
        offsets,
        valid,
    })
}

/// `X_p = E2(E1(x))`, the first pyramid level.
pub fn project_features(x: &SeqTensor, params: &ModelParams, config: &ModelConfig) -> Result<SeqTensor> {
    if x.channels() != config.input_dim {
        return Err(Error::invalid(format!(
            "input has {} channels, model expects {}",
            x.channels(),
            config.input_dim
        )));
    }
    let mut tape = GradTape::new();
    let ids = params.map(|t| tape.leaf(t.clone()));
    let input = tape.leaf(x.clone());
    let mut rec = Recorder { tape, ids, config };
    let z = rec.project(input, x.len())?;
    Ok(rec.tape.value(z).clone())
}

/// `Z^l = TCM(Z^(l-1))` for `l = 2..L`.
pub fn build_pyramid(z1: &SeqTensor, params: &ModelParams, config: &ModelConfig) -> Result<FeaturePyramid> {
    if z1.channels() != config.embed_dim {
        return Err(Error::invalid(format!(
            "pyramid input has {} channels, expected {}",
            z1.channels(),
            config.embed_dim
        )));
    }
    if z1.len() < config.min_length() {
        return Err(Error::invalid(format!(
            "sequence of length {} too short for {} pyramid levels",
            z1.len(),
            config.num_levels
        )));
    }
    check_params(params, config)?;
    let mut tape = GradTape::new();
    let ids = params.map(|t| tape.leaf(t.clone()));
    let first = tape.leaf(z1.clone());
    let mut rec = Recorder { tape, ids, config };
    let mut levels = vec![first];
    for level in 1..config.num_levels {
        let prev = levels[level - 1];
        let len = rec.tape.value(prev).len();
        levels.push(rec.tcm(level - 1, prev, len)?);
    }
    Ok(FeaturePyramid {
        levels: levels.into_iter().map(|id| rec.tape.value(id).clone()).collect(),
    })
}

/// Shared classification and regression heads applied to every level.
pub fn heads_forward(pyramid: &FeaturePyramid, params: &ModelParams, config: &ModelConfig) -> Result<HeadOutputs> {
    let mut tape = GradTape::new();
    let ids = params.map(|t| tape.leaf(t.clone()));
    let mut rec = Recorder { tape, ids, config };
    let mut levels = Vec::with_capacity(pyramid.levels.len());
    for (level, z) in pyramid.levels.iter().enumerate() {
        if z.channels() != config.embed_dim {
            return Err(Error::invalid(format!(
                "pyramid level {level} has {} channels, expected {}",
                z.channels(),
                config.embed_dim
            )));
        }
        let zid = rec.tape.leaf(z.clone());
        let (c, o) = rec.heads(zid, z.len())?;
        levels.push(LevelOutput {
            logits: rec.tape.value(c).clone(),
            offsets: rec.tape.value(o).clone(),
        });
    }
    Ok(HeadOutputs { levels })
}

/// `project_features -> build_pyramid -> heads_forward`.
pub fn model_forward(x: &SeqTensor, params: &ModelParams, config: &ModelConfig) -> Result<HeadOutputs> {
    Ok(record_forward(x, x.len(), params, config)?.outputs())
}
