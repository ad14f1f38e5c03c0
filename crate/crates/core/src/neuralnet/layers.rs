//! Layer primitives with explicit forward and backward passes.
//!
//! Per-item work runs in parallel over the batch; every cross-item reduction
//! is summed sequentially in item order with `f64` accumulators, so results
//! do not depend on the number of worker threads.

use rand::Rng;
use rayon::prelude::*;

use super::gemm::gemm;
use super::Tensor;
use crate::{seed, Error, Result};

fn check_len(t: &Tensor, want: &[usize], what: &str) -> Result<()> {
    if t.shape() != want {
        return Err(Error::shape(format!(
            "{what} has shape {:?}, expected {want:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Sums per-item partials in order.
fn reduce_items(parts: &[Vec<f32>], len: usize) -> Vec<f32> {
    let mut acc = vec![0f64; len];
    for part in parts {
        for (a, &p) in acc.iter_mut().zip(part) {
            *a += p as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Column sums of a `[rows, cols]` buffer.
fn column_sums(data: &[f32], cols: usize) -> Vec<f32> {
    let mut acc = vec![0f64; cols];
    for row in data.chunks_exact(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

fn im2col(x: &[f32], h: usize, w: usize, c: usize, k: usize, col: &mut [f32]) {
    let p = (k / 2) as isize;
    let kkc = k * k * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &mut col[(y * w + xx) * kkc..][..kkc];
            for ky in 0..k {
                let sy = y as isize + ky as isize - p;
                for kx in 0..k {
                    let sx = xx as isize + kx as isize - p;
                    let dst = &mut row[(ky * k + kx) * c..][..c];
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        dst.copy_from_slice(&x[(sy as usize * w + sx as usize) * c..][..c]);
                    } else {
                        dst.fill(0.0);
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f32], h: usize, w: usize, c: usize, k: usize, dx: &mut [f32]) {
    let p = (k / 2) as isize;
    let kkc = k * k * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &col[(y * w + xx) * kkc..][..kkc];
            for ky in 0..k {
                let sy = y as isize + ky as isize - p;
                if sy < 0 || sy as usize >= h {
                    continue;
                }
                for kx in 0..k {
                    let sx = xx as isize + kx as isize - p;
                    if sx < 0 || sx as usize >= w {
                        continue;
                    }
                    let dst = &mut dx[(sy as usize * w + sx as usize) * c..][..c];
                    for (d, &g) in dst.iter_mut().zip(&row[(ky * k + kx) * c..][..c]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

fn conv_kernel_dims(kernel: &Tensor, cin: usize, x: &Tensor) -> Result<(usize, usize)> {
    match kernel.shape() {
        &[k, k2, kc, cout] if k == k2 && k % 2 == 1 && kc == cin => Ok((k, cout)),
        s => Err(Error::shape(format!(
            "convolution kernel {s:?} does not fit input {:?} (want [k, k, {cin}, cout], k odd)",
            x.shape()
        ))),
    }
}

/// Same-padded, stride-1 cross-correlation. `kernel` is `[k, k, Cin, Cout]`.
pub fn conv2d_forward(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, h, w, cin) = x.dims4()?;
    let (k, cout) = conv_kernel_dims(kernel, cin, x)?;
    check_len(bias, &[cout], "convolution bias")?;
    let kkc = k * k * cin;
    let mut y = Tensor::zeros(&[n, h, w, cout]);
    y.data_mut()
        .par_chunks_mut(h * w * cout)
        .zip(x.data().par_chunks(h * w * cin))
        .for_each(|(yo, xi)| {
            for row in yo.chunks_exact_mut(cout) {
                row.copy_from_slice(bias.data());
            }
            if k == 1 {
                gemm(h * w, cin, cout, xi, false, kernel.data(), false, yo, true);
            } else {
                let mut col = vec![0f32; h * w * kkc];
                im2col(xi, h, w, cin, k, &mut col);
                gemm(h * w, kkc, cout, &col, false, kernel.data(), false, yo, true);
            }
        });
    Ok(y)
}

/// Gradients of [`conv2d_forward`]: `(dx, dkernel, dbias)`.
pub fn conv2d_backward(x: &Tensor, kernel: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, h, w, cin) = x.dims4()?;
    let (k, cout) = conv_kernel_dims(kernel, cin, x)?;
    check_len(dy, &[n, h, w, cout], "convolution output gradient")?;
    let kkc = k * k * cin;
    let mut dx = Tensor::zeros(x.shape());
    let parts: Vec<Vec<f32>> = dx
        .data_mut()
        .par_chunks_mut(h * w * cin)
        .zip(x.data().par_chunks(h * w * cin))
        .zip(dy.data().par_chunks(h * w * cout))
        .map(|((dxi, xi), dyi)| {
            let mut dk = vec![0f32; kkc * cout];
            if k == 1 {
                gemm(cin, h * w, cout, xi, true, dyi, false, &mut dk, false);
                gemm(h * w, cout, cin, dyi, false, kernel.data(), true, dxi, false);
            } else {
                let mut col = vec![0f32; h * w * kkc];
                im2col(xi, h, w, cin, k, &mut col);
                gemm(kkc, h * w, cout, &col, true, dyi, false, &mut dk, false);
                gemm(h * w, cout, kkc, dyi, false, kernel.data(), true, &mut col, false);
                col2im_add(&col, h, w, cin, k, dxi);
            }
            dk
        })
        .collect();
    let dk = Tensor::new(kernel.shape(), reduce_items(&parts, kkc * cout))?;
    let db = Tensor::new(&[cout], column_sums(dy.data(), cout))?;
    Ok((dx, dk, db))
}

fn depthwise(xi: &[f32], h: usize, w: usize, c: usize, k: usize, dw: &[f32], out: &mut [f32]) {
    let p = (k / 2) as isize;
    out.fill(0.0);
    for y in 0..h {
        for xx in 0..w {
            let o = &mut out[(y * w + xx) * c..][..c];
            for ky in 0..k {
                let sy = y as isize + ky as isize - p;
                if sy < 0 || sy as usize >= h {
                    continue;
                }
                for kx in 0..k {
                    let sx = xx as isize + kx as isize - p;
                    if sx < 0 || sx as usize >= w {
                        continue;
                    }
                    let src = &xi[(sy as usize * w + sx as usize) * c..][..c];
                    let wk = &dw[(ky * k + kx) * c..][..c];
                    for ((o, &s), &wv) in o.iter_mut().zip(src).zip(wk) {
                        *o += s * wv;
                    }
                }
            }
        }
    }
}

fn separable_dims(
    x: &Tensor,
    dw: &Tensor,
    pw: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, h, w, cin) = x.dims4()?;
    let k = match dw.shape() {
        &[k, k2, c] if k == k2 && k % 2 == 1 && c == cin => k,
        s => {
            return Err(Error::shape(format!(
                "depthwise kernel {s:?} does not fit input {:?}",
                x.shape()
            )))
        }
    };
    let cout = match pw.shape() {
        &[1, 1, c, cout] if c == cin => cout,
        s => {
            return Err(Error::shape(format!(
                "pointwise kernel {s:?} does not fit {cin} input channels"
            )))
        }
    };
    check_len(bias, &[cout], "separable bias")?;
    Ok((n, h, w, cin, k, cout))
}

/// Depthwise `[k, k, Cin]` spatial filtering, then `[1, 1, Cin, Cout]`
/// pointwise mixing plus bias.
pub fn separable_conv2d_forward(
    x: &Tensor,
    depthwise_kernel: &Tensor,
    pointwise_kernel: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let (n, h, w, cin, k, cout) = separable_dims(x, depthwise_kernel, pointwise_kernel, bias)?;
    let mut y = Tensor::zeros(&[n, h, w, cout]);
    y.data_mut()
        .par_chunks_mut(h * w * cout)
        .zip(x.data().par_chunks(h * w * cin))
        .for_each(|(yo, xi)| {
            let mut d = vec![0f32; h * w * cin];
            depthwise(xi, h, w, cin, k, depthwise_kernel.data(), &mut d);
            for row in yo.chunks_exact_mut(cout) {
                row.copy_from_slice(bias.data());
            }
            gemm(h * w, cin, cout, &d, false, pointwise_kernel.data(), false, yo, true);
        });
    Ok(y)
}

/// Gradients of [`separable_conv2d_forward`]:
/// `(dx, ddepthwise, dpointwise, dbias)`.
pub fn separable_conv2d_backward(
    x: &Tensor,
    depthwise_kernel: &Tensor,
    pointwise_kernel: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let cout = pointwise_kernel.shape().last().copied().unwrap_or(0);
    let zero_bias = Tensor::zeros(&[cout]);
    let (n, h, w, cin, k, cout) = separable_dims(x, depthwise_kernel, pointwise_kernel, &zero_bias)?;
    check_len(dy, &[n, h, w, cout], "separable output gradient")?;
    let p = (k / 2) as isize;
    let dwk = depthwise_kernel.data();

    let mut dx = Tensor::zeros(x.shape());
    let parts: Vec<(Vec<f32>, Vec<f32>)> = dx
        .data_mut()
        .par_chunks_mut(h * w * cin)
        .zip(x.data().par_chunks(h * w * cin))
        .zip(dy.data().par_chunks(h * w * cout))
        .map(|((dxi, xi), dyi)| {
            let mut d = vec![0f32; h * w * cin];
            depthwise(xi, h, w, cin, k, dwk, &mut d);
            let mut dpw = vec![0f32; cin * cout];
            gemm(cin, h * w, cout, &d, true, dyi, false, &mut dpw, false);
            // reuse the depthwise buffer for its own gradient
            gemm(
                h * w,
                cout,
                cin,
                dyi,
                false,
                pointwise_kernel.data(),
                true,
                &mut d,
                false,
            );
            let mut ddw = vec![0f32; k * k * cin];
            for y in 0..h {
                for xx in 0..w {
                    let g = &d[(y * w + xx) * cin..][..cin];
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - p;
                        if sy < 0 || sy as usize >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = xx as isize + kx as isize - p;
                            if sx < 0 || sx as usize >= w {
                                continue;
                            }
                            let at = (sy as usize * w + sx as usize) * cin;
                            let tap = (ky * k + kx) * cin;
                            let xs = &xi[at..at + cin];
                            for ((dd, &xv), &gv) in ddw[tap..tap + cin].iter_mut().zip(xs).zip(g) {
                                *dd += xv * gv;
                            }
                            let ws = &dwk[tap..tap + cin];
                            for ((dv, &wv), &gv) in dxi[at..at + cin].iter_mut().zip(ws).zip(g) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
            (ddw, dpw)
        })
        .collect();
    let (ddw_parts, dpw_parts): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let ddw = Tensor::new(depthwise_kernel.shape(), reduce_items(&ddw_parts, k * k * cin))?;
    let dpw = Tensor::new(pointwise_kernel.shape(), reduce_items(&dpw_parts, cin * cout))?;
    let db = Tensor::new(&[cout], column_sums(dy.data(), cout))?;
    Ok((dx, ddw, dpw, db))
}

/// `x` for positive inputs, `alpha (e^x - 1)` otherwise.
pub fn elu(x: &Tensor, alpha: f64) -> Tensor {
    let a = alpha as f32;
    let data = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v } else { a * v.exp_m1() })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub fn elu_backward(x: &Tensor, dy: &Tensor, alpha: f64) -> Tensor {
    let a = alpha as f32;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { g * a * v.exp() })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Infer,
}

/// State kept by a training-mode batch norm for its backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
}

pub struct BatchNormOutput {
    pub y: Tensor,
    pub cache: Option<BatchNormCache>,
    /// Updated `(running_mean, running_var)` in training mode.
    pub running: Option<(Tensor, Tensor)>,
}

/// Per-channel normalization over every axis but the last.
///
/// Training mode uses biased batch statistics and blends them into the
/// running statistics as `momentum * running + (1 - momentum) * batch`.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: BatchNormMode,
    epsilon: f64,
    momentum: f64,
) -> Result<BatchNormOutput> {
    let c = *x.shape().last().expect("nonempty shape");
    for (t, what) in [
        (gamma, "gamma"),
        (beta, "beta"),
        (running_mean, "running mean"),
        (running_var, "running variance"),
    ] {
        check_len(t, &[c], what)?;
    }
    let rows = x.len() / c;
    let (g, b) = (gamma.data(), beta.data());

    if mode == BatchNormMode::Infer {
        let scale: Vec<f32> = running_var
            .data()
            .iter()
            .zip(g)
            .map(|(&v, &g)| (g as f64 / (v as f64 + epsilon).sqrt()) as f32)
            .collect();
        let mut y = x.clone();
        for row in y.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = (row[ch] - running_mean.data()[ch]) * scale[ch] + b[ch];
            }
        }
        return Ok(BatchNormOutput {
            y,
            cache: None,
            running: None,
        });
    }

    if x.shape()[0] < 2 {
        return Err(Error::invalid(
            "training-mode batch normalization needs a batch of at least 2",
        ));
    }
    let mut mean = vec![0f64; c];
    for row in x.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0f64; c];
    for row in x.data().chunks_exact(c) {
        for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = xv as f64 - m;
            *v += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= rows as f64);
    let inv_std: Vec<f32> = var.iter().map(|&v| (1.0 / (v + epsilon).sqrt()) as f32).collect();
    let mean32: Vec<f32> = mean.iter().map(|&m| m as f32).collect();

    let mut xhat = x.data().to_vec();
    let mut y = Tensor::zeros(x.shape());
    for (hr, yr) in xhat.chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)) {
        for (((((h, y), &m), &s), &g), &b) in hr.iter_mut().zip(yr).zip(&mean32).zip(&inv_std).zip(g).zip(b) {
            *h = (*h - m) * s;
            *y = g * *h + b;
        }
    }
    let blend = |old: &Tensor, new: &[f64]| {
        let data = old
            .data()
            .iter()
            .zip(new)
            .map(|(&o, &n)| (momentum * o as f64 + (1.0 - momentum) * n) as f32)
            .collect();
        Tensor::new(&[c], data).expect("channel vector")
    };
    Ok(BatchNormOutput {
        y,
        running: Some((blend(running_mean, &mean), blend(running_var, &var))),
        cache: Some(BatchNormCache { xhat, inv_std }),
    })
}

/// Gradients of training-mode batch norm: `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward(cache: &BatchNormCache, gamma: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let c = gamma.len();
    if dy.len() != cache.xhat.len() || *dy.shape().last().unwrap() != c {
        return Err(Error::shape("batch norm gradient does not match its cache"));
    }
    let rows = (dy.len() / c) as f64;
    let mut dbeta = vec![0f64; c];
    let mut dgamma = vec![0f64; c];
    for (gr, hr) in dy.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] += gr[ch] as f64;
            dgamma[ch] += gr[ch] as f64 * hr[ch] as f64;
        }
    }
    let scale: Vec<f64> = (0..c)
        .map(|ch| gamma.data()[ch] as f64 * cache.inv_std[ch] as f64 / rows)
        .collect();
    let mut dx = Tensor::zeros(dy.shape());
    for ((dr, gr), hr) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(dy.data().chunks_exact(c))
        .zip(cache.xhat.chunks_exact(c))
    {
        for (ch, d) in dr.iter_mut().enumerate() {
            let v = rows * gr[ch] as f64 - dbeta[ch] - hr[ch] as f64 * dgamma[ch];
            *d = (scale[ch] * v) as f32;
        }
    }
    let to = |v: Vec<f64>| Tensor::new(&[c], v.into_iter().map(|x| x as f32).collect());
    Ok((dx, to(dgamma)?, to(dbeta)?))
}

/// 2x2 max pooling with stride 2. Returns the output and, per output
/// element, the flat input index it was taken from (first maximum in scan
/// order).
pub fn max_pool_forward(x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (n, h, w, c) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "2x2 pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, oh, ow, c]);
    let mut arg = vec![0u32; n * oh * ow * c];
    let xd = x.data();
    let mut o = 0;
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if best == usize::MAX || xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    y.data_mut()[o] = xd[best];
                    arg[o] = best as u32;
                    o += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn max_pool_backward(argmax: &[u32], input_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    if dy.len() != argmax.len() {
        return Err(Error::shape("pooling gradient does not match its argmax cache"));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[i as usize] += g;
    }
    Ok(dx)
}

/// Inverted dropout. In training mode every element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; the mask
/// stream is keyed by `(seed, layer, step)`. Returns the output and the
/// multiplicative mask (absent when the layer is the identity).
pub fn dropout_forward(
    x: &Tensor,
    rate: f64,
    seed: u64,
    layer: usize,
    step: u64,
    train: bool,
) -> (Tensor, Option<Vec<f32>>) {
    if !train || rate == 0.0 {
        return (x.clone(), None);
    }
    let mut rng = seed::rng(&[seed, layer as u64, step]);
    let keep = (1.0 / (1.0 - rate)) as f32;
    let mask: Vec<f32> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    (Tensor::new(x.shape(), data).expect("same shape"), Some(mask))
}

pub fn dropout_backward(mask: Option<&[f32]>, dy: &Tensor) -> Tensor {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let data = dy.data().iter().zip(m).map(|(&g, &m)| g * m).collect();
            Tensor::new(dy.shape(), data).expect("same shape")
        }
    }
}

/// `x · w + b` for `x: [N, D]`, `w: [D, M]`, `b: [M]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d) = x.dims2()?;
    let m = match w.shape() {
        &[wd, m] if wd == d => m,
        s => {
            return Err(Error::shape(format!(
                "dense weight {s:?} does not fit input {:?}",
                x.shape()
            )))
        }
    };
    check_len(b, &[m], "dense bias")?;
    let mut y = Tensor::zeros(&[n, m]);
    for row in y.data_mut().chunks_exact_mut(m) {
        row.copy_from_slice(b.data());
    }
    gemm(n, d, m, x.data(), false, w.data(), false, y.data_mut(), true);
    Ok(y)
}

/// Gradients of [`dense_forward`]: `(dx, dw, db)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d) = x.dims2()?;
    let (_, m) = w.dims2()?;
    check_len(dy, &[n, m], "dense output gradient")?;
    let mut dx = Tensor::zeros(&[n, d]);
    gemm(n, m, d, dy.data(), false, w.data(), true, dx.data_mut(), false);
    let mut dw = Tensor::zeros(&[d, m]);
    gemm(d, n, m, x.data(), true, dy.data(), false, dw.data_mut(), false);
    let db = Tensor::new(&[m], column_sums(dy.data(), m))?;
    Ok((dx, dw, db))
}

/// Mean squared error and its gradient `2 (pred - target) / N`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0f64;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            loss += d * d;
            (2.0 * d / n) as f32
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0f32)).collect()).unwrap()
    }

    #[test]
    fn identity_1x1_conv() {
        let x = rand_tensor(&[2, 4, 5, 3], 1);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv2d_forward(&x, &k, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn conv_shapes_and_ones() {
        let x = rand_tensor(&[2, 8, 8, 3], 2);
        let y = conv2d_forward(&x, &rand_tensor(&[3, 3, 3, 4], 3), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(y.shape(), &[2, 8, 8, 4]);

        let ones = Tensor::filled(&[1, 5, 5, 1], 1.0);
        let y = conv2d_forward(&ones, &Tensor::filled(&[3, 3, 1, 1], 1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn conv_channel_mismatch_names_shapes() {
        let x = Tensor::zeros(&[1, 4, 4, 2]);
        let err = conv2d_forward(&x, &Tensor::zeros(&[3, 3, 3, 4]), &Tensor::zeros(&[4])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3, 3, 3, 4]") && msg.contains("[1, 4, 4, 2]"), "{msg}");
    }

    /// Direct nested-loop evaluation of both definitions.
    fn naive_separable(x: &Tensor, dw: &Tensor, pw: &Tensor, b: &Tensor) -> Vec<f64> {
        let (n, h, w, c) = x.dims4().unwrap();
        let k = dw.shape()[0];
        let cout = pw.shape()[3];
        let p = (k / 2) as isize;
        let mut out = vec![0f64; n * h * w * cout];
        for bi in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let mut d = vec![0f64; c];
                    for (ch, dv) in d.iter_mut().enumerate() {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y as isize + ky as isize - p, xx as isize + kx as isize - p);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    *dv += x.data()[((bi * h + sy as usize) * w + sx as usize) * c + ch] as f64
                                        * dw.data()[(ky * k + kx) * c + ch] as f64;
                                }
                            }
                        }
                    }
                    for o in 0..cout {
                        out[((bi * h + y) * w + xx) * cout + o] =
                            b.data()[o] as f64 + (0..c).map(|ch| d[ch] * pw.data()[ch * cout + o] as f64).sum::<f64>();
                    }
                }
            }
        }
        out
    }

    #[test]
    fn separable_matches_direct_evaluation() {
        let x = rand_tensor(&[2, 6, 7, 3], 4);
        let (dw, pw, b) = (
            rand_tensor(&[3, 3, 3], 5),
            rand_tensor(&[1, 1, 3, 5], 6),
            rand_tensor(&[5], 7),
        );
        let y = separable_conv2d_forward(&x, &dw, &pw, &b).unwrap();
        assert_eq!(y.shape(), &[2, 6, 7, 5]);
        for (a, e) in y.data().iter().zip(naive_separable(&x, &dw, &pw, &b)) {
            assert!((*a as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn separable_with_impulse_is_pointwise_conv() {
        let x = rand_tensor(&[2, 5, 5, 4], 8);
        let mut dw = Tensor::zeros(&[3, 3, 4]);
        for c in 0..4 {
            dw.data_mut()[4 * 4 + c] = 1.0; // centre tap
        }
        let pw = rand_tensor(&[1, 1, 4, 6], 9);
        let b = rand_tensor(&[6], 10);
        let sep = separable_conv2d_forward(&x, &dw, &pw, &b).unwrap();
        let full = conv2d_forward(&x, &pw, &b).unwrap();
        for (a, e) in sep.data().iter().zip(full.data()) {
            assert!((a - e).abs() <= 1e-6);
        }
    }

    #[test]
    fn separable_parameter_count() {
        let (k, cin, cout) = (3, 64, 128);
        assert_eq!(k * k * cin + cin * cout + cout, 8896);
        assert_eq!(k * k * cin * cout + cout, 73856);
    }

    #[test]
    fn elu_values() {
        let x = Tensor::new(&[4], vec![0.0, 2.0, -1.0, 1e-6]).unwrap();
        let y = elu(&x, 1.0);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 2.0);
        assert!((y.data()[2] as f64 - (-0.632_120_558_8)).abs() < 1e-6);
        let z = elu(&Tensor::new(&[2], vec![1e-6, -1e-6]).unwrap(), 1.0);
        assert!(z.data().iter().all(|v| v.abs() <= 2e-6));
    }

    #[test]
    fn batch_norm_train_statistics() {
        let x = rand_tensor(&[16, 3, 3, 4], 11);
        let gamma = Tensor::new(&[4], vec![1.0, 2.0, 0.5, 1.5]).unwrap();
        let beta = Tensor::new(&[4], vec![0.0, -1.0, 3.0, 0.25]).unwrap();
        let out = batch_norm_forward(
            &x,
            &gamma,
            &beta,
            &Tensor::zeros(&[4]),
            &Tensor::filled(&[4], 1.0),
            BatchNormMode::Train,
            1e-5,
            0.9,
        )
        .unwrap();
        for ch in 0..4 {
            let vals: Vec<f64> = out.y.data().iter().skip(ch).step_by(4).map(|&v| v as f64).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!((m - beta.data()[ch] as f64).abs() < 1e-4);
            let g2 = (gamma.data()[ch] as f64).powi(2);
            assert!((v - g2).abs() < 1e-3 * g2.max(1.0), "{v} vs {g2}");
        }
        let (rm, rv) = out.running.unwrap();
        assert!(rm.data().iter().all(|m| m.abs() < 0.1));
        assert!(rv.data().iter().all(|&v| v > 0.9 && v < 1.0));
    }

    #[test]
    fn batch_norm_constant_and_infer() {
        let x = Tensor::filled(&[4, 2, 2, 3], 5.0);
        let (g, b) = (Tensor::filled(&[3], 1.0), Tensor::zeros(&[3]));
        let out = batch_norm_forward(
            &x,
            &g,
            &b,
            &Tensor::zeros(&[3]),
            &Tensor::filled(&[3], 1.0),
            BatchNormMode::Train,
            1e-5,
            0.9,
        )
        .unwrap();
        assert!(out.y.data().iter().all(|&v| v == 0.0));

        let rm = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let x = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let beta = Tensor::new(&[3], vec![0.5, -0.5, 7.0]).unwrap();
        let out = batch_norm_forward(
            &x,
            &Tensor::filled(&[3], 2.0),
            &beta,
            &rm,
            &Tensor::filled(&[3], 4.0),
            BatchNormMode::Infer,
            1e-5,
            0.9,
        )
        .unwrap();
        assert_eq!(out.y.data(), beta.data());

        let single = batch_norm_forward(
            &x,
            &g,
            &b,
            &rm,
            &Tensor::filled(&[3], 1.0),
            BatchNormMode::Train,
            1e-5,
            0.9,
        );
        assert!(matches!(single, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn max_pool_examples() {
        let x = Tensor::new(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let c = Tensor::filled(&[2, 8, 8, 3], 0.5);
        let (y, arg) = max_pool_forward(&c).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 3]);
        assert!(y.data().iter().all(|&v| v == 0.5));
        // ties resolve to the first element in scan order
        assert_eq!(arg[0], 0);
        assert!(max_pool_forward(&Tensor::zeros(&[1, 3, 4, 1])).is_err());
    }

    #[test]
    fn dropout_modes() {
        let x = rand_tensor(&[8, 32], 12);
        assert_eq!(dropout_forward(&x, 0.0, 1, 0, 0, true).0, x);
        assert_eq!(dropout_forward(&x, 0.5, 1, 0, 0, false).0, x);
        let (y, mask) = dropout_forward(&x, 0.5, 1, 3, 9, true);
        let mask = mask.unwrap();
        let dropped = mask.iter().filter(|&&m| m == 0.0).count();
        assert!(dropped > 64 && dropped < 192);
        for ((&a, &b), &m) in y.data().iter().zip(x.data()).zip(&mask) {
            if m != 0.0 {
                assert_eq!(a, 2.0 * b);
            } else {
                assert_eq!(a, 0.0);
            }
        }
        assert_eq!(dropout_forward(&x, 0.5, 1, 3, 9, true).0, y);
        assert_ne!(dropout_forward(&x, 0.5, 1, 3, 10, true).0, y);
    }

    #[test]
    fn dense_examples() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &Tensor::zeros(&[1])).unwrap().data(), &[3.0]);
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dense_forward(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        let y = dense_forward(&rand_tensor(&[5, 3], 1), &rand_tensor(&[3, 7], 2), &Tensor::zeros(&[7])).unwrap();
        assert_eq!(y.shape(), &[5, 7]);
        assert!(dense_forward(&x, &Tensor::zeros(&[3, 1]), &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn mse_examples() {
        let p = Tensor::scalar_column(&[1.0, 2.0]);
        assert_eq!(mse_loss(&p, &p).unwrap().0, 0.0);
        let t = Tensor::scalar_column(&[0.0, 1.0]);
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[1.0, 1.0]);
        assert!(mse_loss(&p, &Tensor::scalar_column(&[1.0])).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let p = rand_tensor(&[6, 1], 13);
        let t = rand_tensor(&[6, 1], 14);
        let (_, g) = mse_loss(&p, &t).unwrap();
        let h = 1e-3f64;
        for i in 0..6 {
            let f = |delta: f64| {
                let n = p.len() as f64;
                p.data()
                    .iter()
                    .zip(t.data())
                    .enumerate()
                    .map(|(j, (&a, &b))| {
                        let a = a as f64 + if j == i { delta } else { 0.0 };
                        (a - b as f64).powi(2)
                    })
                    .sum::<f64>()
                    / n
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            let an = g.data()[i] as f64;
            assert!(
                (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                "{fd} vs {an}"
            );
        }
    }

    proptest! {
        #[test]
        fn layer_gradients_match_finite_differences(seed in 0u64..1000) {
            // conv: d/dx of sum(y * r) for a random projection r
            let x = rand_tensor(&[2, 4, 4, 2], seed);
            let k = rand_tensor(&[3, 3, 2, 3], seed + 1);
            let b = rand_tensor(&[3], seed + 2);
            let r = rand_tensor(&[2, 4, 4, 3], seed + 3);
            let (dx, dk, db) = conv2d_backward(&x, &k, &r).unwrap();
            let obj = |x: &Tensor, k: &Tensor, b: &Tensor| -> f64 {
                conv2d_forward(x, k, b).unwrap().data().iter().zip(r.data())
                    .map(|(&a, &b)| a as f64 * b as f64).sum()
            };
            // the objective is linear in each argument, so a unit step is exact
            for (i, g) in [(5usize, dx.data()[5]), (17, dx.data()[17])] {
                let mut xp = x.clone(); xp.data_mut()[i] += 1.0;
                prop_assert!(((obj(&xp, &k, &b) - obj(&x, &k, &b)) - g as f64).abs() < 1e-3);
            }
            for i in [0usize, 20, 53] {
                let mut kp = k.clone(); kp.data_mut()[i] += 1.0;
                prop_assert!(((obj(&x, &kp, &b) - obj(&x, &k, &b)) - dk.data()[i] as f64).abs() < 1e-3);
            }
            let mut bp = b.clone(); bp.data_mut()[1] += 1.0;
            prop_assert!(((obj(&x, &k, &bp) - obj(&x, &k, &b)) - db.data()[1] as f64).abs() < 1e-3);
        }
    }
}
