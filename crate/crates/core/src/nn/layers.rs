//! Layer kernels. The `*_batch` functions take a leading batch axis and are
//! what [`super::Network`] runs; the unbatched functions are the per-sample
//! forms (`C x H x W` feature maps, flat vectors).
//!
//! Convolutions are 3x3 cross-correlations, stride 1, zero "same" padding,
//! lowered to GEMM through an im2col buffer.

use super::gemm::gemm;
use super::{NnError, Tensor};
use crate::exec::{self, ExecMode};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), NnError> {
    if t.shape().len() != rank {
        return Err(NnError::RankMismatch {
            op,
            expected: rank,
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn expect_shape(op: &'static str, t: &Tensor, shape: &[usize]) -> Result<(), NnError> {
    if t.shape() != shape {
        return Err(NnError::ShapeMismatch {
            op,
            expected: shape.to_vec(),
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// Fills `col` (`C*9 x H*W`) from one `C x H x W` image.
fn im2col(img: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let p = h * w;
    for ch in 0..c {
        let plane = &img[ch * p..(ch + 1) * p];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((ch * TAPS) + ky * KERNEL + kx) * p..][..p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `col` back into a `C x H x W` gradient image (which is overwritten).
fn col2im(col: &[f64], c: usize, h: usize, w: usize, img: &mut [f64]) {
    let p = h * w;
    img.fill(0.0);
    for ch in 0..c {
        let plane = &mut img[ch * p..(ch + 1) * p];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((ch * TAPS) + ky * KERNEL + kx) * p..][..p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] += src[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] += src[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] += src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_dims(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
) -> Result<(usize, usize, usize, usize, usize), NnError> {
    expect_rank("conv2d", x, 4)?;
    expect_rank("conv2d weights", w, 4)?;
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let o = w.shape()[0];
    expect_shape("conv2d weights", w, &[o, c, KERNEL, KERNEL])?;
    expect_shape("conv2d bias", b, &[o])?;
    if h == 0 || wd == 0 {
        return Err(NnError::ShapeMismatch {
            op: "conv2d",
            expected: vec![n, c, 1, 1],
            got: x.shape().to_vec(),
        });
    }
    Ok((n, c, h, wd, o))
}

/// Batched convolution. Returns the output and, when `keep_cols`, the im2col
/// buffers (`N x C*9 x H*W`) needed by [`conv2d_backward_batch`].
pub fn conv2d_forward_batch(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    keep_cols: bool,
) -> Result<(Tensor, Option<Vec<f64>>), NnError> {
    let (n, c, h, w, o) = conv_dims(x, weights, bias)?;
    let (p, k) = (h * w, c * TAPS);
    let mut out = vec![0.0; n * o * p];
    let in_len = c * p;
    let xd = x.data();
    let (wd, bd) = (weights.data(), bias.data());
    let forward_one = |i: usize, out_n: &mut [f64], col: &mut [f64]| {
        im2col(&xd[i * in_len..(i + 1) * in_len], c, h, w, col);
        for (oc, plane) in out_n.chunks_mut(p).enumerate() {
            plane.fill(bd[oc]);
        }
        gemm(o, k, p, wd, false, col, false, 1.0, out_n);
    };
    let mode = ExecMode::default();
    let cols = if keep_cols {
        let mut cols = vec![0.0; n * k * p];
        exec::for_each_chunk_pair_mut(mode, &mut out, o * p, &mut cols, k * p, forward_one);
        Some(cols)
    } else {
        exec::for_each_chunk_mut(mode, &mut out, o * p, |i, out_n| {
            let mut col = vec![0.0; k * p];
            forward_one(i, out_n, &mut col);
        });
        None
    };
    Ok((Tensor::new(vec![n, o, h, w], out)?, cols))
}

/// Accumulates weight/bias gradients into `grad_w`/`grad_b` and returns the
/// input gradient when `want_input_grad`.
pub fn conv2d_backward_batch(
    in_shape: &[usize],
    weights: &Tensor,
    cols: &[f64],
    grad_out: &Tensor,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Result<Option<Tensor>, NnError> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let o = weights.shape()[0];
    let (p, k) = (h * w, c * TAPS);
    expect_shape("conv2d grad_out", grad_out, &[n, o, h, w])?;
    assert_eq!(cols.len(), n * k * p);
    assert_eq!(grad_w.len(), o * k);
    assert_eq!(grad_b.len(), o);

    let g = grad_out.data();
    for i in 0..n {
        let g_n = &g[i * o * p..(i + 1) * o * p];
        let col_n = &cols[i * k * p..(i + 1) * k * p];
        gemm(o, p, k, g_n, false, col_n, true, 1.0, grad_w);
        for (oc, plane) in g_n.chunks(p).enumerate() {
            grad_b[oc] += plane.iter().sum::<f64>();
        }
    }
    if !want_input_grad {
        return Ok(None);
    }
    let wd = weights.data();
    let mut grad_in = vec![0.0; n * c * p];
    exec::for_each_chunk_mut(ExecMode::default(), &mut grad_in, c * p, |i, gi| {
        let mut gcol = vec![0.0; k * p];
        gemm(
            k,
            o,
            p,
            wd,
            true,
            &g[i * o * p..(i + 1) * o * p],
            false,
            0.0,
            &mut gcol,
        );
        col2im(&gcol, c, h, w, gi);
    });
    Ok(Some(Tensor::new(in_shape.to_vec(), grad_in)?))
}

/// Single-image convolution: `C x H x W` -> `O x H x W`.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    expect_rank("conv2d", input, 3)?;
    let (out, _) = conv2d_forward_batch(&input.batched(), weights, bias, false)?;
    let shape = out.shape()[1..].to_vec();
    out.reshape(&shape)
}

/// Returns `(grad_input, grad_weights, grad_bias)` for one image.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    expect_rank("conv2d", input, 3)?;
    let o = weights.shape().first().copied().unwrap_or(0);
    let bias = Tensor::zeros(&[o]);
    let x = input.batched();
    let (_, cols) = conv2d_forward_batch(&x, weights, &bias, true)?;
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[o]);
    let gi = conv2d_backward_batch(
        x.shape(),
        weights,
        &cols.expect("kept"),
        &grad_out.batched(),
        gw.data_mut(),
        gb.data_mut(),
        true,
    )?
    .expect("requested");
    Ok((gi.reshape(input.shape())?, gw, gb))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Passes `grad_out` where `x > 0`, zero elsewhere.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
    expect_shape("relu_backward", grad_out, x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// 2x2/stride-2 max pooling over the last two axes. The returned indices are
/// flat offsets into `x` of each window's maximum (first in row-major order
/// on ties).
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
    let rank = x.shape().len();
    if rank < 2 {
        return Err(NnError::RankMismatch {
            op: "maxpool2x2",
            expected: 3,
            got: x.shape().to_vec(),
        });
    }
    let (h, w) = (x.shape()[rank - 2], x.shape()[rank - 1]);
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(NnError::OddPoolInput {
            height: h,
            width: w,
        });
    }
    let planes: usize = x.shape()[..rank - 2].iter().product();
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let cands = [
                    base + 2 * y * w + 2 * xx,
                    base + 2 * y * w + 2 * xx + 1,
                    base + (2 * y + 1) * w + 2 * xx,
                    base + (2 * y + 1) * w + 2 * xx + 1,
                ];
                let mut best = cands[0];
                for &c in &cands[1..] {
                    if xd[c] > xd[best] {
                        best = c;
                    }
                }
                out.push(xd[best]);
                idx.push(best);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[rank - 2] = oh;
    shape[rank - 1] = ow;
    Ok((Tensor::new(shape, out)?, idx))
}

pub fn maxpool2x2_backward(
    in_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor, NnError> {
    if argmax.len() != grad_out.len() {
        return Err(NnError::DataLength {
            shape: grad_out.shape().to_vec(),
            len: argmax.len(),
        });
    }
    let mut g = Tensor::zeros(in_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    Ok(g)
}

/// `y = x W^T + b` for `x: N x In`, `W: Out x In`.
pub fn dense_forward_batch(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    expect_rank("dense", x, 2)?;
    expect_rank("dense weights", w, 2)?;
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    expect_shape("dense weights", w, &[fout, fin])?;
    expect_shape("dense bias", b, &[fout])?;
    let mut y = Vec::with_capacity(n * fout);
    for _ in 0..n {
        y.extend_from_slice(b.data());
    }
    gemm(n, fin, fout, x.data(), false, w.data(), true, 1.0, &mut y);
    Tensor::new(vec![n, fout], y)
}

/// Accumulates into `grad_w`/`grad_b`; returns the input gradient when asked.
pub fn dense_backward_batch(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Result<Option<Tensor>, NnError> {
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    expect_shape("dense grad_out", grad_out, &[n, fout])?;
    let g = grad_out.data();
    gemm(fout, n, fin, g, true, x.data(), false, 1.0, grad_w);
    for row in g.chunks(fout) {
        for (acc, v) in grad_b.iter_mut().zip(row) {
            *acc += v;
        }
    }
    if !want_input_grad {
        return Ok(None);
    }
    let mut gx = vec![0.0; n * fin];
    gemm(n, fout, fin, g, false, w.data(), false, 0.0, &mut gx);
    Ok(Some(Tensor::new(vec![n, fin], gx)?))
}

pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    expect_rank("dense", x, 1)?;
    let y = dense_forward_batch(&x.batched(), w, b)?;
    let m = y.len();
    y.reshape(&[m])
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    expect_rank("dense", x, 1)?;
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[w.shape()[0]]);
    let gx = dense_backward_batch(
        &x.batched(),
        w,
        &grad_out.batched(),
        gw.data_mut(),
        gb.data_mut(),
        true,
    )?
    .expect("requested");
    Ok((gx.reshape(x.shape())?, gw, gb))
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax over the last axis.
pub fn softmax_batch(logits: &Tensor) -> Result<Tensor, NnError> {
    logits.ensure_finite("softmax")?;
    let k = *logits.shape().last().ok_or(NnError::EmptyBatch)?;
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.data().chunks(k).zip(out.chunks_mut(k)) {
        softmax_row(row, o);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

pub fn softmax(logits: &Tensor) -> Result<Tensor, NnError> {
    expect_rank("softmax", logits, 1)?;
    softmax_batch(logits)
}

/// Negative log-likelihood of `label` and its gradient with respect to the
/// logits that produced `probs` (`probs - onehot`).
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<(f64, Tensor), NnError> {
    expect_rank("cross_entropy", probs, 1)?;
    let k = probs.len();
    if label >= k {
        return Err(NnError::LabelOutOfRange { label, classes: k });
    }
    let loss = -probs.data()[label].ln();
    let mut grad = probs.clone();
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}
