//! Layer primitives with hand-written backward passes.

use rand::Rng;
use rayon::prelude::*;

use super::tensor::debug_check_finite;
use super::{CnnError, Scalar, Tensor};

/// Training enables dropout; evaluation makes it the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Whether per-item work inside a batch may run on the rayon pool. Results
/// are identical in both modes: reductions always run in batch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Serial,
    Parallel,
}

fn mismatch(msg: String) -> CnnError {
    CnnError::ShapeMismatch(msg)
}

fn check_conv_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias_len: usize) -> Result<(), CnnError> {
    let [_, c, _, _] = x.shape();
    let [o, wc, kh, kw] = w.shape();
    if wc != c {
        return Err(mismatch(format!("conv input has {c} channels, kernels expect {wc}")));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(mismatch(format!("same padding needs square odd kernels, got {kh}x{kw}")));
    }
    if bias_len != o {
        return Err(mismatch(format!("{bias_len} biases for {o} kernels")));
    }
    Ok(())
}

/// Unfolds one `(c, h, w)` item into a `(c·k·k) x (h·w)` patch matrix with
/// zero padding `k / 2`.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        for u in 0..k {
            for v in 0..k {
                let row = &mut cols[((ci * k + u) * k + v) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + u as isize - pad;
                    let dst = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + si as usize) * w..][..w];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let sj = j as isize + v as isize - pad;
                        *d = if sj < 0 || sj >= w as isize { T::zero() } else { src[sj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    x.fill(T::zero());
    for ci in 0..c {
        for u in 0..k {
            for v in 0..k {
                let row = &cols[((ci * k + u) * k + v) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + u as isize - pad;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(ci * h + si as usize) * w..][..w];
                    for j in 0..w {
                        let sj = j as isize + v as isize - pad;
                        if sj >= 0 && sj < w as isize {
                            dst[sj as usize] += row[i * w + j];
                        }
                    }
                }
            }
        }
    }
}

fn conv_item_forward<T: Scalar>(x: &[T], w: &Tensor<T>, bias: &[T], h: usize, wd: usize, out: &mut [T]) {
    let [o, c, k, _] = w.shape();
    let hw = h * wd;
    let mut cols = vec![T::zero(); c * k * k * hw];
    im2col(x, c, h, wd, k, &mut cols);
    for (oc, &b) in bias.iter().enumerate() {
        out[oc * hw..(oc + 1) * hw].fill(b);
    }
    T::gemm(false, false, o, hw, c * k * k, T::one(), w.data(), &cols, T::one(), out);
}

/// Stride-1 convolution with same padding:
/// `out[b,o,i,j] = bias[o] + Σ_{c,u,v} w[o,c,u,v] · x_pad[b,c,i+u,j+v]`.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>, CnnError> {
    conv2d_forward_exec(x, w, bias, Exec::Serial)
}

pub fn conv2d_forward_exec<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &[T], exec: Exec) -> Result<Tensor<T>, CnnError> {
    check_conv_shapes(x, w, bias.len())?;
    let [n, _, h, wd] = x.shape();
    let o = w.shape()[0];
    let mut out = Tensor::zeros([n, o, h, wd]);
    let out_len = o * h * wd;
    if n > 0 && out_len > 0 {
        let in_len = x.item_len();
        match exec {
            Exec::Serial => {
                for (xi, oi) in x.data().chunks(in_len.max(1)).zip(out.data_mut().chunks_mut(out_len)) {
                    conv_item_forward(xi, w, bias, h, wd, oi);
                }
            }
            Exec::Parallel => {
                x.data()
                    .par_chunks(in_len.max(1))
                    .zip(out.data_mut().par_chunks_mut(out_len))
                    .for_each(|(xi, oi)| conv_item_forward(xi, w, bias, h, wd, oi));
            }
        }
    }
    debug_check_finite(&out, "conv2d");
    Ok(out)
}

/// Gradients of one layer's parameters and (optionally) its input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

struct ConvItemGrads<T> {
    gw: Vec<T>,
    gb: Vec<T>,
}

fn conv_item_backward<T: Scalar>(
    g: &[T],
    x: &[T],
    w: &Tensor<T>,
    h: usize,
    wd: usize,
    gx: Option<&mut [T]>,
) -> ConvItemGrads<T> {
    let [o, c, k, _] = w.shape();
    let hw = h * wd;
    let ckk = c * k * k;
    let mut cols = vec![T::zero(); ckk * hw];
    im2col(x, c, h, wd, k, &mut cols);
    let mut gw = vec![T::zero(); o * ckk];
    T::gemm(false, true, o, ckk, hw, T::one(), g, &cols, T::zero(), &mut gw);
    let gb = (0..o).map(|oc| g[oc * hw..(oc + 1) * hw].iter().copied().sum()).collect();
    if let Some(gx) = gx {
        // reuse the patch buffer for the input-side gradient
        T::gemm(true, false, ckk, hw, o, T::one(), w.data(), g, T::zero(), &mut cols);
        col2im(&cols, c, h, wd, k, gx);
    }
    ConvItemGrads { gw, gb }
}

/// Exact gradients of [`conv2d_forward`]: `(grad_x, grad_w, grad_b)`.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>), CnnError> {
    let g = conv2d_backward_exec(grad_out, x, w, true, Exec::Serial)?;
    Ok((g.input.expect("input gradient requested"), g.weights, g.bias))
}

pub fn conv2d_backward_exec<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    need_input: bool,
    exec: Exec,
) -> Result<LayerGrads<T>, CnnError> {
    let [o, _, _, _] = w.shape();
    check_conv_shapes(x, w, o)?;
    let [n, _, h, wd] = x.shape();
    if grad_out.shape() != [n, o, h, wd] {
        return Err(mismatch(format!(
            "conv output gradient {:?} does not match forward output {:?}",
            grad_out.shape(),
            [n, o, h, wd]
        )));
    }
    let mut gx = need_input.then(|| Tensor::zeros(x.shape()));
    let in_len = x.item_len().max(1);
    let out_len = grad_out.item_len().max(1);
    let per_item: Vec<ConvItemGrads<T>> = match (exec, gx.as_mut()) {
        (Exec::Serial, Some(gx)) => grad_out
            .data()
            .chunks(out_len)
            .zip(x.data().chunks(in_len))
            .zip(gx.data_mut().chunks_mut(in_len))
            .map(|((g, xi), gxi)| conv_item_backward(g, xi, w, h, wd, Some(gxi)))
            .collect(),
        (Exec::Serial, None) => grad_out
            .data()
            .chunks(out_len)
            .zip(x.data().chunks(in_len))
            .map(|(g, xi)| conv_item_backward(g, xi, w, h, wd, None))
            .collect(),
        (Exec::Parallel, Some(gx)) => grad_out
            .data()
            .par_chunks(out_len)
            .zip(x.data().par_chunks(in_len))
            .zip(gx.data_mut().par_chunks_mut(in_len))
            .map(|((g, xi), gxi)| conv_item_backward(g, xi, w, h, wd, Some(gxi)))
            .collect(),
        (Exec::Parallel, None) => grad_out
            .data()
            .par_chunks(out_len)
            .zip(x.data().par_chunks(in_len))
            .map(|(g, xi)| conv_item_backward(g, xi, w, h, wd, None))
            .collect(),
    };
    let mut weights = Tensor::zeros(w.shape());
    let mut bias = vec![T::zero(); o];
    for item in &per_item {
        for (acc, v) in weights.data_mut().iter_mut().zip(&item.gw) {
            *acc += *v;
        }
        for (acc, v) in bias.iter_mut().zip(&item.gb) {
            *acc += *v;
        }
    }
    Ok(LayerGrads { input: gx, weights, bias })
}

/// Argmax positions (flat input indices) for routing pooled gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCache {
    input_shape: [usize; 4],
    argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2, ceil mode: odd edges see a window padded
/// with −∞. Ties resolve to the first element in row-major window order.
pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, PoolCache) {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    let out_data = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (si, sj) = (2 * i + di, 2 * j + dj);
                    if si < h && sj < w {
                        let idx = base + si * w + sj;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out_data[o] = data[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    (out, PoolCache { input_shape: x.shape(), argmax })
}

pub fn maxpool2x2_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &PoolCache) -> Result<Tensor<T>, CnnError> {
    if grad_out.len() != cache.argmax.len() {
        return Err(mismatch(format!(
            "pool gradient has {} values, forward produced {}",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(cache.input_shape);
    let gxd = gx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gxd[idx] += g;
    }
    Ok(gx)
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gate is 1 where `x > 0` and 0 elsewhere, including at `x = 0`.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>, CnnError> {
    if grad_out.shape() != x.shape() {
        return Err(mismatch(format!("relu gradient {:?} vs input {:?}", grad_out.shape(), x.shape())));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// `y = W x + b` per batch item; `w` has shape `(out, in, 1, 1)` and each
/// item of `x` is flattened.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>, CnnError> {
    let n = x.batch();
    let (out_dim, in_dim) = (w.shape()[0], w.item_len());
    if x.item_len() != in_dim || bias.len() != out_dim {
        return Err(mismatch(format!(
            "dense layer {out_dim}x{in_dim} (+{} biases) applied to items of length {}",
            bias.len(),
            x.item_len()
        )));
    }
    let mut y = vec![T::zero(); n * out_dim];
    for row in y.chunks_mut(out_dim.max(1)) {
        row.copy_from_slice(bias);
    }
    T::gemm(false, true, n, out_dim, in_dim, T::one(), x.data(), w.data(), T::one(), &mut y);
    let y = Tensor::from_vec([n, out_dim, 1, 1], y)?;
    debug_check_finite(&y, "dense");
    Ok(y)
}

pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    need_input: bool,
) -> Result<LayerGrads<T>, CnnError> {
    let n = x.batch();
    let (out_dim, in_dim) = (w.shape()[0], w.item_len());
    if grad_out.shape() != [n, out_dim, 1, 1] || x.item_len() != in_dim {
        return Err(mismatch(format!(
            "dense gradient {:?} for input {:?} and weights {:?}",
            grad_out.shape(),
            x.shape(),
            w.shape()
        )));
    }
    let mut gw = Tensor::zeros(w.shape());
    T::gemm(true, false, out_dim, in_dim, n, T::one(), grad_out.data(), x.data(), T::zero(), gw.data_mut());
    let mut bias = vec![T::zero(); out_dim];
    for row in grad_out.data().chunks(out_dim.max(1)) {
        for (acc, &g) in bias.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let input = if need_input {
        let mut gx = Tensor::zeros(x.shape());
        T::gemm(false, false, n, in_dim, out_dim, T::one(), grad_out.data(), w.data(), T::zero(), gx.data_mut());
        Some(gx)
    } else {
        None
    };
    Ok(LayerGrads { input, weights: gw, bias })
}

/// Output of [`dropout`]; `mask` holds `0` or `1/keep_prob` per element
/// (absent in eval mode).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutOutput<T> {
    pub output: Tensor<T>,
    pub mask: Option<Vec<T>>,
}

/// Inverted dropout: in training each element survives with probability
/// `keep_prob` and survivors are scaled by `1 / keep_prob`.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, keep_prob: f64, mode: Mode, rng: &mut R) -> DropoutOutput<T> {
    assert!(keep_prob > 0.0 && keep_prob <= 1.0, "keep_prob {keep_prob} outside (0, 1]");
    if mode == Mode::Eval || keep_prob == 1.0 {
        return DropoutOutput { output: x.clone(), mask: None };
    }
    let scale = T::from_f64(1.0 / keep_prob).expect("finite scale");
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < keep_prob { scale } else { T::zero() })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    DropoutOutput { output: Tensor::from_vec(x.shape(), data).expect("same shape"), mask: Some(mask) }
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    match mask {
        None => grad_out.clone(),
        Some(mask) => {
            let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
            Tensor::from_vec(grad_out.shape(), data).expect("same shape")
        }
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `(−log softmax(logits)[label], softmax − one_hot)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>), CnnError> {
    if label >= logits.len() {
        return Err(CnnError::LabelOutOfRange { label, classes: logits.len() });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_total = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    let loss = log_total - (logits[label] - max);
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Mean loss over a batch of logits `(n, W, 1, 1)` and the gradient of that
/// mean.
pub fn softmax_cross_entropy_batch<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>), CnnError> {
    let n = logits.batch();
    if labels.len() != n {
        return Err(mismatch(format!("{} labels for a batch of {n}", labels.len())));
    }
    let classes = logits.item_len();
    let inv_n = T::one() / T::from_usize(n.max(1)).expect("batch size");
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(n * classes);
    for (b, &label) in labels.iter().enumerate() {
        let (loss, g) = softmax_cross_entropy(logits.item(b), label)?;
        total += loss;
        grad.extend(g.into_iter().map(|v| v * inv_n));
    }
    Ok((total * inv_n, Tensor::from_vec(logits.shape(), grad)?))
}
