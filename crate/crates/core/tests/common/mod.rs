//! Independent double-precision reference for the network, written with
//! plain nested loops and no shared code with the library kernels.

#![allow(dead_code)]

use std::collections::BTreeMap;

use lawnmeter::neuralnet::{
    init_parameters, model_backward, model_forward, mse_loss, LayerSpec, Mode, ModelSpec, ParamKey, Parameters, Role,
    Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Params64 = BTreeMap<ParamKey, Vec<f64>>;

pub fn to_f64(params: &Parameters) -> Params64 {
    params
        .iter()
        .map(|(k, t)| (*k, t.data().iter().map(|&v| v as f64).collect()))
        .collect()
}

/// Activations are `[n][flattened per-sample values]` with a per-sample shape.
struct Act {
    shape: Vec<usize>,
    data: Vec<Vec<f64>>,
}

fn p<'a>(params: &'a Params64, layer: usize, role: Role) -> &'a [f64] {
    &params[&ParamKey::new(layer, role)]
}

/// Training-mode forward pass (batch statistics, dropout ignored) returning
/// one prediction per sample.
pub fn forward(spec: &ModelSpec, params: &Params64, x: &[Vec<f64>]) -> Vec<f64> {
    let mut a = Act {
        shape: spec.input.to_vec(),
        data: x.to_vec(),
    };
    for (i, layer) in spec.layers.iter().enumerate() {
        a = match *layer {
            LayerSpec::Conv {
                out_channels: co,
                kernel: k,
            } => {
                let (h, w, c) = (a.shape[0], a.shape[1], a.shape[2]);
                let (ker, bias) = (p(params, i, Role::Kernel), p(params, i, Role::Bias));
                let r = (k / 2) as i64;
                let data = a
                    .data
                    .iter()
                    .map(|s| {
                        let mut out = vec![0.0; h * w * co];
                        for y in 0..h as i64 {
                            for x in 0..w as i64 {
                                for o in 0..co {
                                    let mut acc = bias[o];
                                    for dy in -r..=r {
                                        for dx in -r..=r {
                                            let (sy, sx) = (y + dy, x + dx);
                                            if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                                continue;
                                            }
                                            for ci in 0..c {
                                                let kv = ker
                                                    [((((dy + r) as usize * k) + (dx + r) as usize) * c + ci) * co + o];
                                                acc += kv * s[((sy as usize) * w + sx as usize) * c + ci];
                                            }
                                        }
                                    }
                                    out[((y as usize) * w + x as usize) * co + o] = acc;
                                }
                            }
                        }
                        out
                    })
                    .collect();
                Act {
                    shape: vec![h, w, co],
                    data,
                }
            }
            LayerSpec::SepConv {
                out_channels: co,
                kernel: k,
            } => {
                let (h, w, c) = (a.shape[0], a.shape[1], a.shape[2]);
                let dw = p(params, i, Role::Depthwise);
                let pw = p(params, i, Role::Pointwise);
                let bias = p(params, i, Role::Bias);
                let r = (k / 2) as i64;
                let data = a
                    .data
                    .iter()
                    .map(|s| {
                        let mut out = vec![0.0; h * w * co];
                        for y in 0..h as i64 {
                            for x in 0..w as i64 {
                                let mut d = vec![0.0; c];
                                for (ci, dv) in d.iter_mut().enumerate() {
                                    for dy in -r..=r {
                                        for dx in -r..=r {
                                            let (sy, sx) = (y + dy, x + dx);
                                            if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                                continue;
                                            }
                                            *dv += dw[(((dy + r) as usize * k) + (dx + r) as usize) * c + ci]
                                                * s[((sy as usize) * w + sx as usize) * c + ci];
                                        }
                                    }
                                }
                                for o in 0..co {
                                    let mut acc = bias[o];
                                    for ci in 0..c {
                                        acc += d[ci] * pw[ci * co + o];
                                    }
                                    out[((y as usize) * w + x as usize) * co + o] = acc;
                                }
                            }
                        }
                        out
                    })
                    .collect();
                Act {
                    shape: vec![h, w, co],
                    data,
                }
            }
            LayerSpec::BatchNorm { epsilon, .. } => {
                let c = *a.shape.last().unwrap();
                let (g, b) = (p(params, i, Role::Gamma), p(params, i, Role::Beta));
                let mut mean = vec![0.0; c];
                let mut count = 0.0;
                for s in &a.data {
                    for (j, v) in s.iter().enumerate() {
                        mean[j % c] += v;
                    }
                    count += (s.len() / c) as f64;
                }
                mean.iter_mut().for_each(|m| *m /= count);
                let mut var = vec![0.0; c];
                for s in &a.data {
                    for (j, v) in s.iter().enumerate() {
                        var[j % c] += (v - mean[j % c]).powi(2);
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                let data = a
                    .data
                    .iter()
                    .map(|s| {
                        s.iter()
                            .enumerate()
                            .map(|(j, v)| {
                                let ch = j % c;
                                g[ch] * (v - mean[ch]) / (var[ch] + epsilon).sqrt() + b[ch]
                            })
                            .collect()
                    })
                    .collect();
                Act { shape: a.shape, data }
            }
            LayerSpec::Elu { alpha } => Act {
                data: a
                    .data
                    .iter()
                    .map(|s| {
                        s.iter()
                            .map(|&v| if v > 0.0 { v } else { alpha * (v.exp() - 1.0) })
                            .collect()
                    })
                    .collect(),
                shape: a.shape,
            },
            LayerSpec::MaxPool => {
                let (h, w, c) = (a.shape[0], a.shape[1], a.shape[2]);
                let data = a
                    .data
                    .iter()
                    .map(|s| {
                        let mut out = Vec::with_capacity(h * w * c / 4);
                        for y in 0..h / 2 {
                            for x in 0..w / 2 {
                                for ch in 0..c {
                                    let at = |yy: usize, xx: usize| s[(yy * w + xx) * c + ch];
                                    out.push(
                                        at(2 * y, 2 * x)
                                            .max(at(2 * y, 2 * x + 1))
                                            .max(at(2 * y + 1, 2 * x))
                                            .max(at(2 * y + 1, 2 * x + 1)),
                                    );
                                }
                            }
                        }
                        out
                    })
                    .collect();
                Act {
                    shape: vec![h / 2, w / 2, c],
                    data,
                }
            }
            LayerSpec::Dropout { .. } => a,
            LayerSpec::Flatten => Act {
                shape: vec![a.shape.iter().product()],
                data: a.data,
            },
            LayerSpec::Dense { out_features: m } => {
                let d = a.shape[0];
                let (wt, b) = (p(params, i, Role::Kernel), p(params, i, Role::Bias));
                let data = a
                    .data
                    .iter()
                    .map(|s| {
                        (0..m)
                            .map(|o| b[o] + (0..d).map(|j| s[j] * wt[j * m + o]).sum::<f64>())
                            .collect()
                    })
                    .collect();
                Act { shape: vec![m], data }
            }
        };
    }
    a.data.into_iter().map(|s| s[0]).collect()
}

/// MSE against `targets` plus the L2 penalty on kernels and weights.
pub fn loss(spec: &ModelSpec, params: &Params64, x: &[Vec<f64>], targets: &[f64]) -> f64 {
    let pred = forward(spec, params, x);
    let mse = pred.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    let l2: f64 = params
        .iter()
        .filter(|(k, _)| matches!(k.role, Role::Kernel | Role::Depthwise | Role::Pointwise))
        .flat_map(|(_, v)| v.iter())
        .map(|v| v * v)
        .sum();
    mse + spec.l2_lambda * l2
}

/// Central difference of `loss` with respect to one parameter element.
pub fn numeric_gradient(
    spec: &ModelSpec,
    params: &Params64,
    x: &[Vec<f64>],
    targets: &[f64],
    key: ParamKey,
    index: usize,
    h: f64,
) -> f64 {
    let mut plus = params.clone();
    plus.get_mut(&key).unwrap()[index] += h;
    let mut minus = params.clone();
    minus.get_mut(&key).unwrap()[index] -= h;
    (loss(spec, &plus, x, targets) - loss(spec, &minus, x, targets)) / (2.0 * h)
}

pub fn reduced_spec() -> ModelSpec {
    ModelSpec {
        input: [8, 8, 1],
        layers: vec![
            LayerSpec::Conv {
                out_channels: 3,
                kernel: 3,
            },
            LayerSpec::BatchNorm {
                epsilon: 1e-5,
                momentum: 0.9,
            },
            LayerSpec::Elu { alpha: 1.0 },
            LayerSpec::SepConv {
                out_channels: 4,
                kernel: 3,
            },
            LayerSpec::BatchNorm {
                epsilon: 1e-5,
                momentum: 0.9,
            },
            LayerSpec::Elu { alpha: 1.0 },
            LayerSpec::MaxPool,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 5 },
            LayerSpec::Elu { alpha: 1.0 },
            LayerSpec::Dropout { rate: 0.0 },
            LayerSpec::Dense { out_features: 1 },
        ],
        l2_lambda: 1e-2,
    }
}

/// Largest relative deviation between analytic and central-difference
/// gradients over every trainable parameter element. Denominators are
/// floored at `floor`, below which the comparison is effectively absolute:
/// the bias of a convolution feeding batch norm has an exact gradient of
/// zero, and f32 round-off is all the analytic side can report for it.
pub fn max_gradient_error(spec: &ModelSpec, seed: u64, batch: usize, h: f64, floor: f64) -> f64 {
    let params = init_parameters(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let per: usize = spec.input.iter().product();
    let xs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..per).map(|_| rng.random_range(0.0..1.0f32) as f64).collect())
        .collect();
    let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0f32) as f64).collect();

    let shape = [batch, spec.input[0], spec.input[1], spec.input[2]];
    let x = Tensor::new(&shape, xs.iter().flatten().map(|&v| v as f32).collect()).unwrap();
    let t = Tensor::new(&[batch, 1], targets.iter().map(|&v| v as f32).collect()).unwrap();
    let (pred, cache) = model_forward(spec, &params, &x, Mode::Train { seed: 0, step: 0 }, false).unwrap();
    let (_, dpred) = mse_loss(&pred, &t).unwrap();
    let grads = model_backward(spec, &params, &cache, &dpred).unwrap();

    let p64 = to_f64(&params);
    let mut worst = 0f64;
    for (key, g) in &grads {
        for (i, &a) in g.data().iter().enumerate() {
            let n = numeric_gradient(spec, &p64, &xs, &targets, *key, i, h);
            let a = a as f64;
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}
