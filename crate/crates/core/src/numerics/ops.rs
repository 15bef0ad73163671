//! Forward kernels and their adjoints.
//!
//! Every kernel is a pure function. The `*_backward` functions take the
//! saved forward state and an upstream gradient and return input/parameter
//! gradients; [`GradTape`](super::GradTape) chains them.
//!
//! Conv weights are stored as a `Cout x (k * Cin)` tensor where entry
//! `(o, j * Cin + i)` multiplies input channel `i` at window offset `j`.

use super::SeqTensor;
use crate::error::{Error, Result};

/// Sliding-window geometry along time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    /// Zero (or `-inf`) positions virtually prepended to the sequence.
    pub pad_left: usize,
    pub out_len: usize,
}

impl Window {
    /// Symmetric padding: `out = floor((len + 2 * pad - kernel) / stride) + 1`.
    pub fn symmetric(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "kernel ({kernel}) and stride ({stride}) must be >= 1"
            )));
        }
        if len + 2 * pad < kernel {
            return Err(Error::invalid(format!(
                "padded length {} shorter than kernel {kernel}",
                len + 2 * pad
            )));
        }
        Ok(Window {
            kernel,
            stride,
            pad_left: pad,
            out_len: (len + 2 * pad - kernel) / stride + 1,
        })
    }

    /// Geometry used between pyramid levels: output `i` is centered on input
    /// `stride * i`, `pad_left = (kernel - 1) / 2`, and the output length is
    /// `ceil(len / stride)` for every kernel size.
    pub fn downsample(len: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || len == 0 {
            return Err(Error::invalid(format!(
                "downsample needs len, kernel, stride >= 1 (got {len}, {kernel}, {stride})"
            )));
        }
        Ok(Window {
            kernel,
            stride,
            pad_left: (kernel - 1) / 2,
            out_len: len.div_ceil(stride),
        })
    }

    /// Same-length, stride-1 geometry (`pad = kernel / 2` for odd kernels).
    pub fn same(len: usize, kernel: usize) -> Result<Self> {
        Self::downsample(len, kernel, 1)
    }

    /// First input index covered by output `i` (may be negative).
    #[inline]
    pub fn start(&self, i: usize) -> isize {
        (i * self.stride) as isize - self.pad_left as isize
    }

    /// Input indices of output `i` that fall inside `[0, limit)`.
    #[inline]
    pub fn positions(&self, i: usize, limit: usize) -> std::ops::Range<usize> {
        let s = self.start(i);
        let lo = s.max(0) as usize;
        let hi = ((s + self.kernel as isize).max(0) as usize).min(limit);
        lo..hi.max(lo)
    }
}

fn check_conv_shapes(x: &SeqTensor, w: &SeqTensor, b: &SeqTensor, kernel: usize) -> Result<()> {
    let cin = x.channels();
    if w.channels() != kernel * cin {
        return Err(Error::invalid(format!(
            "conv weight has {} columns, expected kernel {kernel} x input channels {cin}",
            w.channels()
        )));
    }
    if b.len() != 1 || b.channels() != w.len() {
        return Err(Error::invalid(format!(
            "conv bias shape {:?} does not match {} output channels",
            b.shape(),
            w.len()
        )));
    }
    Ok(())
}

/// 1-D convolution, zero padding. `w` is `Cout x (k * Cin)`, `b` is `1 x Cout`.
pub fn conv1d(x: &SeqTensor, w: &SeqTensor, b: &SeqTensor, stride: usize, pad: usize) -> Result<SeqTensor> {
    if w.is_empty() || x.channels() == 0 || !w.channels().is_multiple_of(x.channels()) {
        return Err(Error::invalid(format!(
            "conv weight columns {} not a multiple of input channels {}",
            w.channels(),
            x.channels()
        )));
    }
    let kernel = w.channels() / x.channels();
    let window = Window::symmetric(x.len(), kernel, stride, pad)?;
    conv1d_window(x, w, b, &window)
}

pub(crate) fn conv1d_window(x: &SeqTensor, w: &SeqTensor, b: &SeqTensor, window: &Window) -> Result<SeqTensor> {
    check_conv_shapes(x, w, b, window.kernel)?;
    let cin = x.channels();
    let cout = w.len();
    let mut y = SeqTensor::zeros(window.out_len, cout);
    for t in 0..window.out_len {
        let start = window.start(t);
        let out = y.row_mut(t);
        out.copy_from_slice(b.row(0));
        for p in window.positions(t, x.len()) {
            let j = (p as isize - start) as usize;
            let xr = x.row(p);
            for (o, acc) in out.iter_mut().enumerate() {
                let wr = &w.row(o)[j * cin..(j + 1) * cin];
                *acc += dot(wr, xr);
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dw, db)`.
pub(crate) fn conv1d_backward(
    x: &SeqTensor,
    w: &SeqTensor,
    window: &Window,
    dy: &SeqTensor,
) -> (SeqTensor, SeqTensor, SeqTensor) {
    let cin = x.channels();
    let cout = w.len();
    let mut dx = SeqTensor::zeros(x.len(), cin);
    let mut dw = SeqTensor::zeros(cout, w.channels());
    let mut db = SeqTensor::zeros(1, cout);
    for t in 0..window.out_len {
        let g = dy.row(t);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (acc, gv) in db.row_mut(0).iter_mut().zip(g) {
            *acc += gv;
        }
        let start = window.start(t);
        for p in window.positions(t, x.len()) {
            let j = (p as isize - start) as usize;
            let xr = x.row(p);
            let dxr = dx.row_mut(p);
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let wr = &w.row(o)[j * cin..(j + 1) * cin];
                for (d, wv) in dxr.iter_mut().zip(wr) {
                    *d += go * wv;
                }
                let dwr = &mut dw.row_mut(o)[j * cin..(j + 1) * cin];
                for (d, xv) in dwr.iter_mut().zip(xr) {
                    *d += go * xv;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Saved state of a layer-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct LayerNormCache {
    pub xhat: SeqTensor,
    pub inv_std: Vec<f64>,
}

/// Per-time-step normalization over channels followed by an affine map.
pub fn layer_norm(x: &SeqTensor, gamma: &SeqTensor, beta: &SeqTensor, eps: f64) -> Result<SeqTensor> {
    layer_norm_cached(x, gamma, beta, eps).map(|(y, _)| y)
}

pub(crate) fn layer_norm_cached(
    x: &SeqTensor,
    gamma: &SeqTensor,
    beta: &SeqTensor,
    eps: f64,
) -> Result<(SeqTensor, LayerNormCache)> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!(
            "layer-norm eps must be finite and >= 0, got {eps}"
        )));
    }
    let c = x.channels();
    if gamma.shape() != (1, c) || beta.shape() != (1, c) {
        return Err(Error::invalid(format!(
            "layer-norm affine shapes {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut y = SeqTensor::zeros(x.len(), c);
    let mut xhat = SeqTensor::zeros(x.len(), c);
    let mut inv_std = Vec::with_capacity(x.len());
    let (g, b) = (gamma.row(0), beta.row(0));
    for t in 0..x.len() {
        let xr = x.row(t);
        let mean = xr.iter().sum::<f64>() / c as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let hr = xhat.row_mut(t);
        for (h, v) in hr.iter_mut().zip(xr) {
            // A zero-variance row maps to zero even when eps = 0.
            *h = if var == 0.0 { 0.0 } else { (v - mean) * inv };
        }
        let hr = xhat.row(t).to_vec();
        for (ch, out) in y.row_mut(t).iter_mut().enumerate() {
            *out = g[ch] * hr[ch] + b[ch];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward(
    gamma: &SeqTensor,
    cache: &LayerNormCache,
    dy: &SeqTensor,
) -> (SeqTensor, SeqTensor, SeqTensor) {
    let (rows, c) = dy.shape();
    let mut dx = SeqTensor::zeros(rows, c);
    let mut dgamma = SeqTensor::zeros(1, c);
    let mut dbeta = SeqTensor::zeros(1, c);
    let g = gamma.row(0);
    let mut dxhat = vec![0.0; c];
    for t in 0..rows {
        let dyr = dy.row(t);
        if dyr.iter().all(|&v| v == 0.0) {
            continue;
        }
        let hr = cache.xhat.row(t);
        for ch in 0..c {
            dgamma.row_mut(0)[ch] += dyr[ch] * hr[ch];
            dbeta.row_mut(0)[ch] += dyr[ch];
            dxhat[ch] = dyr[ch] * g[ch];
        }
        if !cache.inv_std[t].is_finite() {
            continue;
        }
        let mean_d = dxhat.iter().sum::<f64>() / c as f64;
        let mean_dh = dxhat.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>() / c as f64;
        let inv = cache.inv_std[t];
        for (ch, out) in dx.row_mut(t).iter_mut().enumerate() {
            *out = inv * (dxhat[ch] - mean_d - hr[ch] * mean_dh);
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu(x: &SeqTensor) -> SeqTensor {
    x.map(|v| v.max(0.0))
}

/// Gradient passes only where `x > 0`.
pub(crate) fn relu_backward(x: &SeqTensor, dy: &SeqTensor) -> SeqTensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

fn check_window_coverage(window: &Window, len: usize) -> Result<()> {
    for i in 0..window.out_len {
        if window.positions(i, len).is_empty() {
            return Err(Error::invalid(format!(
                "pooling window {i} lies entirely in padding (len {len}, kernel {}, stride {}, pad {})",
                window.kernel, window.stride, window.pad_left
            )));
        }
    }
    Ok(())
}

/// Sentinel in a max-pool argmax table for outputs without a valid input.
pub(crate) const NO_ARGMAX: usize = usize::MAX;

/// Max pooling; padding never wins. Ties go to the lowest time index.
pub fn maxpool1d(x: &SeqTensor, kernel: usize, stride: usize, pad: usize) -> Result<SeqTensor> {
    let window = Window::symmetric(x.len(), kernel, stride, pad)?;
    maxpool_window(x, &window, x.len()).map(|(y, _)| y)
}

/// Rows `valid..` of `x` are treated like padding. Outputs whose window has
/// no valid input are 0 with no gradient route.
pub(crate) fn maxpool_window(x: &SeqTensor, window: &Window, valid: usize) -> Result<(SeqTensor, Vec<usize>)> {
    check_window_coverage(window, x.len())?;
    let c = x.channels();
    let mut y = SeqTensor::zeros(window.out_len, c);
    let mut argmax = vec![NO_ARGMAX; window.out_len * c];
    for i in 0..window.out_len {
        let positions = window.positions(i, valid.min(x.len()));
        for ch in 0..c {
            let mut best = NO_ARGMAX;
            let mut best_val = f64::NEG_INFINITY;
            for p in positions.clone() {
                let v = x.get(p, ch);
                if best == NO_ARGMAX || v > best_val {
                    best = p;
                    best_val = v;
                }
            }
            if best != NO_ARGMAX {
                y.set(i, ch, best_val);
                argmax[i * c + ch] = best;
            }
        }
    }
    Ok((y, argmax))
}

pub(crate) fn maxpool_backward(in_len: usize, argmax: &[usize], dy: &SeqTensor) -> SeqTensor {
    let c = dy.channels();
    let mut dx = SeqTensor::zeros(in_len, c);
    for i in 0..dy.len() {
        for ch in 0..c {
            let p = argmax[i * c + ch];
            if p != NO_ARGMAX {
                let v = dx.get(p, ch) + dy.get(i, ch);
                dx.set(p, ch, v);
            }
        }
    }
    dx
}

/// Average pooling; padded positions are excluded from the divisor.
pub fn avgpool1d(x: &SeqTensor, kernel: usize, stride: usize, pad: usize) -> Result<SeqTensor> {
    let window = Window::symmetric(x.len(), kernel, stride, pad)?;
    avgpool_window(x, &window, x.len())
}

pub(crate) fn avgpool_window(x: &SeqTensor, window: &Window, valid: usize) -> Result<SeqTensor> {
    check_window_coverage(window, x.len())?;
    let c = x.channels();
    let mut y = SeqTensor::zeros(window.out_len, c);
    for i in 0..window.out_len {
        let positions = window.positions(i, valid.min(x.len()));
        if positions.is_empty() {
            continue;
        }
        let n = positions.len() as f64;
        let out = y.row_mut(i);
        for p in positions {
            for (o, v) in out.iter_mut().zip(x.row(p)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= n;
        }
    }
    Ok(y)
}

pub(crate) fn avgpool_backward(in_len: usize, window: &Window, valid: usize, dy: &SeqTensor) -> SeqTensor {
    let c = dy.channels();
    let mut dx = SeqTensor::zeros(in_len, c);
    for i in 0..window.out_len {
        let positions = window.positions(i, valid.min(in_len));
        if positions.is_empty() {
            continue;
        }
        let n = positions.len() as f64;
        for p in positions {
            for (d, g) in dx.row_mut(p).iter_mut().zip(dy.row(i)) {
                *d += g / n;
            }
        }
    }
    dx
}

/// Keeps rows `0, stride, 2 * stride, ...`.
pub fn subsample(x: &SeqTensor, stride: usize) -> Result<SeqTensor> {
    if stride == 0 {
        return Err(Error::invalid("subsample stride must be >= 1"));
    }
    let out_len = x.len().div_ceil(stride);
    let mut y = SeqTensor::zeros(out_len, x.channels());
    for i in 0..out_len {
        y.row_mut(i).copy_from_slice(x.row(i * stride));
    }
    Ok(y)
}

pub(crate) fn subsample_backward(in_len: usize, stride: usize, dy: &SeqTensor) -> SeqTensor {
    let mut dx = SeqTensor::zeros(in_len, dy.channels());
    for i in 0..dy.len() {
        dx.row_mut(i * stride).copy_from_slice(dy.row(i));
    }
    dx
}

/// Saved state of the attention core.
#[derive(Clone, Debug)]
pub(crate) struct AttentionCache {
    pub q: SeqTensor,
    pub k: SeqTensor,
    pub v: SeqTensor,
    /// `Tq x valid` softmax weights.
    pub attn: SeqTensor,
    pub mixed: SeqTensor,
}

/// `x * w` for a `C x C'` weight (rows of `x` are row vectors).
fn matmul(x: &SeqTensor, w: &SeqTensor) -> SeqTensor {
    let mut y = SeqTensor::zeros(x.len(), w.channels());
    for t in 0..x.len() {
        let out = y.row_mut(t);
        for (c, &xv) in x.row(t).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, wv) in out.iter_mut().zip(w.row(c)) {
                *o += xv * wv;
            }
        }
    }
    y
}

/// `dy * w^T`.
fn matmul_t(dy: &SeqTensor, w: &SeqTensor) -> SeqTensor {
    let mut dx = SeqTensor::zeros(dy.len(), w.len());
    for t in 0..dy.len() {
        let g = dy.row(t);
        for (c, out) in dx.row_mut(t).iter_mut().enumerate() {
            *out = dot(w.row(c), g);
        }
    }
    dx
}

/// `x^T * dy`, accumulated into `dw`.
fn accumulate_outer(dw: &mut SeqTensor, x: &SeqTensor, dy: &SeqTensor) {
    for t in 0..x.len() {
        let g = dy.row(t);
        for (c, &xv) in x.row(t).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (d, gv) in dw.row_mut(c).iter_mut().zip(g) {
                *d += xv * gv;
            }
        }
    }
}

fn check_square(name: &str, w: &SeqTensor, c: usize) -> Result<()> {
    if w.shape() != (c, c) {
        return Err(Error::invalid(format!(
            "attention weight {name} has shape {:?}, expected ({c}, {c})",
            w.shape()
        )));
    }
    Ok(())
}

/// Strided-query attention before normalization: returns
/// `x[stride * i] + softmax(q_i K^T / sqrt(C)) V Wo` for each query `i`.
/// Keys and values come from rows `0..valid`.
pub(crate) fn attention_core(
    x: &SeqTensor,
    weights: [&SeqTensor; 4],
    stride: usize,
    valid: usize,
) -> Result<(SeqTensor, AttentionCache)> {
    let c = x.channels();
    let [wq, wk, wv, wo] = weights;
    for (name, w) in [("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)] {
        check_square(name, w, c)?;
    }
    if stride == 0 {
        return Err(Error::invalid("attention query stride must be >= 1"));
    }
    let valid = valid.clamp(1, x.len());
    let strided = subsample(x, stride)?;
    let q = matmul(&strided, wq);
    let k = matmul(x, wk);
    let v = matmul(x, wv);
    let tq = strided.len();
    let scale = 1.0 / (c as f64).sqrt();
    let mut attn = SeqTensor::zeros(tq, valid);
    let mut mixed = SeqTensor::zeros(tq, c);
    for i in 0..tq {
        let qi = q.row(i);
        let scores: Vec<f64> = (0..valid).map(|j| scale * dot(qi, k.row(j))).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let ar = attn.row_mut(i);
        for (a, e) in ar.iter_mut().zip(&exps) {
            *a = e / z;
        }
        let ar = attn.row(i).to_vec();
        let hr = mixed.row_mut(i);
        for (j, a) in ar.iter().enumerate() {
            for (h, vv) in hr.iter_mut().zip(v.row(j)) {
                *h += a * vv;
            }
        }
    }
    let mut out = matmul(&mixed, wo);
    out.add_assign(&strided);
    Ok((out, AttentionCache { q, k, v, attn, mixed }))
}

/// Returns `(dx, [dwq, dwk, dwv, dwo])`.
pub(crate) fn attention_core_backward(
    x: &SeqTensor,
    weights: [&SeqTensor; 4],
    stride: usize,
    cache: &AttentionCache,
    dy: &SeqTensor,
) -> (SeqTensor, [SeqTensor; 4]) {
    let c = x.channels();
    let [wq, wk, wv, wo] = weights;
    let valid = cache.attn.channels();
    let tq = dy.len();
    let scale = 1.0 / (c as f64).sqrt();
    let strided = subsample(x, stride).expect("stride validated in forward");

    let mut dwo = SeqTensor::zeros(c, c);
    accumulate_outer(&mut dwo, &cache.mixed, dy);
    let dmixed = matmul_t(dy, wo);

    let mut dq = SeqTensor::zeros(tq, c);
    let mut dk = SeqTensor::zeros(x.len(), c);
    let mut dv = SeqTensor::zeros(x.len(), c);
    for i in 0..tq {
        let dh = dmixed.row(i);
        let ar = cache.attn.row(i);
        let da: Vec<f64> = (0..valid).map(|j| dot(dh, cache.v.row(j))).collect();
        for (j, a) in ar.iter().enumerate() {
            for (d, g) in dv.row_mut(j).iter_mut().zip(dh) {
                *d += a * g;
            }
        }
        let weighted: f64 = ar.iter().zip(&da).map(|(a, d)| a * d).sum();
        for j in 0..valid {
            let ds = ar[j] * (da[j] - weighted) * scale;
            if ds == 0.0 {
                continue;
            }
            for (d, kv) in dq.row_mut(i).iter_mut().zip(cache.k.row(j)) {
                *d += ds * kv;
            }
            let qi = cache.q.row(i).to_vec();
            for (d, qv) in dk.row_mut(j).iter_mut().zip(&qi) {
                *d += ds * qv;
            }
        }
    }

    let mut dwq = SeqTensor::zeros(c, c);
    let mut dwk = SeqTensor::zeros(c, c);
    let mut dwv = SeqTensor::zeros(c, c);
    accumulate_outer(&mut dwq, &strided, &dq);
    accumulate_outer(&mut dwk, x, &dk);
    accumulate_outer(&mut dwv, x, &dv);

    let mut dx = matmul_t(&dk, wk);
    dx.add_assign(&matmul_t(&dv, wv));
    let dstrided = matmul_t(&dq, wq);
    for i in 0..tq {
        let row = dx.row_mut(i * stride);
        for ((d, a), b) in row.iter_mut().zip(dstrided.row(i)).zip(dy.row(i)) {
            *d += a + b;
        }
    }
    (dx, [dwq, dwk, dwv, dwo])
}

/// Default epsilon of every layer norm in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Single-head strided-query self-attention with residual and a
/// parameter-free layer norm. Output length is `ceil(T / query_stride)`.
pub fn self_attention(
    x: &SeqTensor,
    wq: &SeqTensor,
    wk: &SeqTensor,
    wv: &SeqTensor,
    wo: &SeqTensor,
    query_stride: usize,
) -> Result<SeqTensor> {
    let (r, _) = attention_core(x, [wq, wk, wv, wo], query_stride, x.len())?;
    let c = x.channels();
    layer_norm(
        &r,
        &SeqTensor::filled(1, c, 1.0),
        &SeqTensor::zeros(1, c),
        LAYER_NORM_EPS,
    )
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
