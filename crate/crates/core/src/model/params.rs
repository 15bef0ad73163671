use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, TcmVariant, PROJECTION_KERNEL};
use crate::numerics::SeqTensor;

/// Classifier prior probability used to initialize the classification bias.
pub const CLASS_PRIOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    /// `Cout x (k * Cin)`, see [`crate::numerics::ops`] for the layout.
    pub weight: T,
    /// `1 x Cout`.
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<T> {
    pub gamma: T,
    pub beta: T,
}

/// Conv -> layer norm -> ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: ConvParams<T>,
    pub norm: NormParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TcmParams<T> {
    Conv(ConvParams<T>),
    Attention {
        wq: T,
        wk: T,
        wv: T,
        wo: T,
        norm: NormParams<T>,
    },
}

/// All learnable tensors of the model, generic over the leaf type so the
/// same structure can hold weights, gradients, optimizer moments or tape
/// handles.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTree<T> {
    pub projection: [ConvBlock<T>; 2],
    pub cls_tower: [ConvBlock<T>; 2],
    pub reg_tower: [ConvBlock<T>; 2],
    pub cls_out: ConvParams<T>,
    pub reg_out: ConvParams<T>,
    /// One entry per pyramid transition for parametric TCM variants, empty
    /// otherwise.
    pub tcm: Vec<TcmParams<T>>,
}

pub type ModelParams = ParamTree<SeqTensor>;

impl<T> ConvParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ConvParams<U> {
        ConvParams {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

impl<T> NormParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NormParams<U> {
        NormParams {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

impl<T> ConvBlock<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ConvBlock<U> {
        ConvBlock {
            conv: self.conv.map(f),
            norm: self.norm.map(f),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        self.conv.visit(&format!("{prefix}.conv"), out);
        self.norm.visit(&format!("{prefix}.norm"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        self.conv.visit_mut(out);
        self.norm.visit_mut(out);
    }
}

impl<T> TcmParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> TcmParams<U> {
        match self {
            TcmParams::Conv(c) => TcmParams::Conv(c.map(f)),
            TcmParams::Attention { wq, wk, wv, wo, norm } => TcmParams::Attention {
                wq: f(wq),
                wk: f(wk),
                wv: f(wv),
                wo: f(wo),
                norm: norm.map(f),
            },
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        match self {
            TcmParams::Conv(c) => c.visit(&format!("{prefix}.conv"), out),
            TcmParams::Attention { wq, wk, wv, wo, norm } => {
                for (name, t) in [("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)] {
                    out.push((format!("{prefix}.attn.{name}"), t));
                }
                norm.visit(&format!("{prefix}.attn.norm"), out);
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        match self {
            TcmParams::Conv(c) => c.visit_mut(out),
            TcmParams::Attention { wq, wk, wv, wo, norm } => {
                out.extend([wq, wk, wv, wo]);
                norm.visit_mut(out);
            }
        }
    }
}

impl<T> ParamTree<T> {
    /// Applies `f` to every leaf in [`named`](Self::named) order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ParamTree<U> {
        let f = &mut f;
        ParamTree {
            projection: [self.projection[0].map(f), self.projection[1].map(f)],
            cls_tower: [self.cls_tower[0].map(f), self.cls_tower[1].map(f)],
            reg_tower: [self.reg_tower[0].map(f), self.reg_tower[1].map(f)],
            cls_out: self.cls_out.map(f),
            reg_out: self.reg_out.map(f),
            tcm: self.tcm.iter().map(|t| t.map(f)).collect(),
        }
    }

    /// Leaves with dotted names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (i, b) in self.projection.iter().enumerate() {
            b.visit(&format!("projection.{i}"), &mut out);
        }
        for (i, b) in self.cls_tower.iter().enumerate() {
            b.visit(&format!("cls_tower.{i}"), &mut out);
        }
        for (i, b) in self.reg_tower.iter().enumerate() {
            b.visit(&format!("reg_tower.{i}"), &mut out);
        }
        self.cls_out.visit("cls_out", &mut out);
        self.reg_out.visit("reg_out", &mut out);
        for (i, t) in self.tcm.iter().enumerate() {
            t.visit(&format!("tcm.{i}"), &mut out);
        }
        out
    }

    pub fn leaves(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable leaves, same order as [`named`](Self::named).
    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for b in self.projection.iter_mut() {
            b.visit_mut(&mut out);
        }
        for b in self.cls_tower.iter_mut() {
            b.visit_mut(&mut out);
        }
        for b in self.reg_tower.iter_mut() {
            b.visit_mut(&mut out);
        }
        self.cls_out.visit_mut(&mut out);
        self.reg_out.visit_mut(&mut out);
        for t in self.tcm.iter_mut() {
            t.visit_mut(&mut out);
        }
        out
    }
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        self.map(|t| SeqTensor::zeros(t.len(), t.channels()))
    }

    /// Number of scalar learnables.
    pub fn count(&self) -> usize {
        self.leaves().iter().map(|t| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.leaves().iter().all(|t| t.is_finite())
    }

    /// Flattened values in leaf order.
    pub fn flatten(&self) -> Vec<f64> {
        self.leaves()
            .iter()
            .flat_map(|t| t.as_slice().iter().copied())
            .collect()
    }
}

/// Number of scalar learnables in `params`.
pub fn count_params(params: &ModelParams) -> usize {
    params.count()
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, rows: usize, cols: usize, bound: f64) -> SeqTensor {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect();
        SeqTensor::from_vec(rows, cols, data).expect("positive dims")
    }

    fn conv(&mut self, cin: usize, cout: usize, kernel: usize) -> ConvParams<SeqTensor> {
        let fan_in = (cin * kernel) as f64;
        ConvParams {
            weight: self.uniform(cout, kernel * cin, 1.0 / fan_in.sqrt()),
            bias: SeqTensor::zeros(1, cout),
        }
    }

    fn norm(c: usize) -> NormParams<SeqTensor> {
        NormParams {
            gamma: SeqTensor::filled(1, c, 1.0),
            beta: SeqTensor::zeros(1, c),
        }
    }

    fn block(&mut self, cin: usize, cout: usize, kernel: usize) -> ConvBlock<SeqTensor> {
        ConvBlock {
            conv: self.conv(cin, cout, kernel),
            norm: Self::norm(cout),
        }
    }
}

/// Fan-in scaled uniform conv weights, zero biases, unit/zero layer norms,
/// and a classification bias of `-ln((1 - p) / p)` with `p = CLASS_PRIOR`.
pub fn init_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let d = config.embed_dim;
    let hk = config.head_kernel;
    let projection = [
        init.block(config.input_dim, d, PROJECTION_KERNEL),
        init.block(d, d, PROJECTION_KERNEL),
    ];
    let cls_tower = [init.block(d, d, hk), init.block(d, d, hk)];
    let reg_tower = [init.block(d, d, hk), init.block(d, d, hk)];
    let mut cls_out = init.conv(d, config.num_classes, hk);
    cls_out.bias = SeqTensor::filled(1, config.num_classes, -((1.0 - CLASS_PRIOR) / CLASS_PRIOR).ln());
    let reg_out = init.conv(d, 2, hk);
    let transitions = config.num_levels - 1;
    let tcm = match config.tcm_variant {
        TcmVariant::Conv => (0..transitions)
            .map(|_| TcmParams::Conv(init.conv(d, d, config.tcm_kernel)))
            .collect(),
        TcmVariant::Attention => (0..transitions)
            .map(|_| {
                let bound = 1.0 / (d as f64).sqrt();
                TcmParams::Attention {
                    wq: init.uniform(d, d, bound),
                    wk: init.uniform(d, d, bound),
                    wv: init.uniform(d, d, bound),
                    wo: init.uniform(d, d, bound),
                    norm: Init::norm(d),
                }
            })
            .collect(),
        TcmVariant::MaxPool | TcmVariant::AvgPool | TcmVariant::Subsample => Vec::new(),
    };
    ModelParams {
        projection,
        cls_tower,
        reg_tower,
        cls_out,
        reg_out,
        tcm,
    }
}
