//! Reverse-mode recording of the operators in [`ops`](super::ops).

use super::ops::{self, AttentionCache, LayerNormCache, Window};
use super::SeqTensor;
use crate::error::Result;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        window: Window,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        cache: LayerNormCache,
    },
    Relu {
        x: NodeId,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: NodeId,
        window: Window,
        valid: usize,
    },
    Subsample {
        x: NodeId,
        stride: usize,
    },
    MaskRows {
        x: NodeId,
        valid: usize,
    },
    Attention {
        x: NodeId,
        weights: [NodeId; 4],
        stride: usize,
        cache: AttentionCache,
    },
}

#[derive(Debug)]
struct Node {
    value: SeqTensor,
    op: Op,
}

/// Ordered record of executed ops. One tape per forward pass; values are
/// immutable once recorded.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`NodeId`]; `None` for nodes the seeds do not reach.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<SeqTensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&SeqTensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros shaped like `like` when unreached.
    pub fn get_or_zeros(&self, id: NodeId, like: &SeqTensor) -> SeqTensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| SeqTensor::zeros(like.len(), like.channels()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<SeqTensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &SeqTensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: SeqTensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: SeqTensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, window: Window) -> Result<NodeId> {
        let y = ops::conv1d_window(self.value(x), self.value(w), self.value(b), &window)?;
        Ok(self.push(y, Op::Conv1d { x, w, b, window }))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (y, cache) = ops::layer_norm_cached(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta, cache }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu { x })
    }

    /// Max pooling where rows `valid..` of the input count as padding.
    pub fn maxpool(&mut self, x: NodeId, window: Window, valid: usize) -> Result<NodeId> {
        let (y, argmax) = ops::maxpool_window(self.value(x), &window, valid)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn avgpool(&mut self, x: NodeId, window: Window, valid: usize) -> Result<NodeId> {
        let y = ops::avgpool_window(self.value(x), &window, valid)?;
        Ok(self.push(y, Op::AvgPool { x, window, valid }))
    }

    pub fn subsample(&mut self, x: NodeId, stride: usize) -> Result<NodeId> {
        let y = ops::subsample(self.value(x), stride)?;
        Ok(self.push(y, Op::Subsample { x, stride }))
    }

    /// Zeroes rows `valid..`; no gradient flows through them.
    pub fn mask_rows(&mut self, x: NodeId, valid: usize) -> NodeId {
        let y = self.value(x).masked(valid);
        self.push(y, Op::MaskRows { x, valid })
    }

    /// Attention core (strided queries, residual) without the final norm.
    /// Keys and values are restricted to rows `0..valid`.
    pub fn attention(&mut self, x: NodeId, weights: [NodeId; 4], stride: usize, valid: usize) -> Result<NodeId> {
        let w = weights.map(|id| self.value(id));
        let (y, cache) = ops::attention_core(self.value(x), w, stride, valid)?;
        Ok(self.push(
            y,
            Op::Attention {
                x,
                weights,
                stride,
                cache,
            },
        ))
    }

    /// Propagates the seed gradients (upstream gradients of output nodes)
    /// back through the tape.
    pub fn backward(&self, seeds: &[(NodeId, SeqTensor)]) -> Gradients {
        let mut grads: Vec<Option<SeqTensor>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            accumulate(&mut grads, *id, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Conv1d { x, w, b, window } => {
                    let (dx, dw, db) = ops::conv1d_backward(self.value(*x), self.value(*w), window, &dy);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::LayerNorm { x, gamma, beta, cache } => {
                    let (dx, dg, db) = ops::layer_norm_backward(self.value(*gamma), cache, &dy);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dg);
                    accumulate(&mut grads, *beta, db);
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(self.value(*x), &dy);
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = ops::maxpool_backward(self.value(*x).len(), argmax, &dy);
                    accumulate(&mut grads, *x, dx);
                }
                Op::AvgPool { x, window, valid } => {
                    let dx = ops::avgpool_backward(self.value(*x).len(), window, *valid, &dy);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Subsample { x, stride } => {
                    let dx = ops::subsample_backward(self.value(*x).len(), *stride, &dy);
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaskRows { x, valid } => {
                    accumulate(&mut grads, *x, dy.masked(*valid));
                }
                Op::Attention {
                    x,
                    weights,
                    stride,
                    cache,
                } => {
                    let w = weights.map(|id| self.value(id));
                    let (dx, dw) = ops::attention_core_backward(self.value(*x), w, *stride, cache, &dy);
                    accumulate(&mut grads, *x, dx);
                    for (id, g) in weights.iter().zip(dw) {
                        accumulate(&mut grads, *id, g);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<SeqTensor>], id: NodeId, g: SeqTensor) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
