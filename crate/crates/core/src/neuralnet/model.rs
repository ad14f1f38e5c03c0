use super::layers::*;
use super::{check_parameters, Gradients, LayerSpec, ModelSpec, ParamKey, Parameters, Role, Tensor};
use crate::{Error, Result};

/// Whether a pass trains (batch statistics, active dropout) or infers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// `seed` and `step` key the dropout masks.
    Train {
        seed: u64,
        step: u64,
    },
    Infer,
}

#[derive(Clone, Debug)]
enum Aux {
    None,
    BatchNorm(BatchNormCache),
    Pool(Vec<u32>),
    Dropout(Option<Vec<f32>>),
}

/// What a forward pass leaves behind for the backward pass and for
/// inspection.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub mode: Mode,
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
    /// Output of every layer, when requested.
    pub activations: Option<Vec<Tensor>>,
    /// New batch-norm running statistics from a training pass.
    pub running_updates: Vec<(ParamKey, Tensor)>,
}

impl ForwardCache {
    /// Writes the running statistics gathered during a training pass.
    pub fn apply_running_updates(&self, params: &mut Parameters) {
        for (key, t) in &self.running_updates {
            params.insert(*key, t.clone());
        }
    }
}

fn at_layer(i: usize, layer: &LayerSpec, e: Error) -> Error {
    let tag = |m: String| format!("layer {i} ({}): {m}", layer.name());
    match e {
        Error::Shape(m) => Error::Shape(tag(m)),
        Error::InvalidArgument(m) => Error::InvalidArgument(tag(m)),
        other => other,
    }
}

fn param<'a>(params: &'a Parameters, layer: usize, role: Role) -> Result<&'a Tensor> {
    params
        .get(&ParamKey::new(layer, role))
        .ok_or_else(|| Error::invalid(format!("missing parameter {}", ParamKey::new(layer, role))))
}

/// Runs `x: [N, H, W, C]` through the model. Returns predictions `[N, 1]`.
pub fn model_forward(
    spec: &ModelSpec,
    params: &Parameters,
    x: &Tensor,
    mode: Mode,
    keep_activations: bool,
) -> Result<(Tensor, ForwardCache)> {
    check_parameters(spec, params)?;
    let want = spec.input;
    match x.shape() {
        [_, h, w, c] if [*h, *w, *c] == want => {}
        s => {
            return Err(Error::shape(format!(
                "input has shape {s:?}, model expects [N, {}, {}, {}]",
                want[0], want[1], want[2]
            )))
        }
    }
    let train = matches!(mode, Mode::Train { .. });
    let n = x.shape()[0];
    let mut cache = ForwardCache {
        mode,
        inputs: Vec::new(),
        aux: Vec::new(),
        activations: keep_activations.then(Vec::new),
        running_updates: Vec::new(),
    };
    let mut cur = x.clone();
    for (i, layer) in spec.layers.iter().enumerate() {
        let p = |role| param(params, i, role);
        let (out, aux) = (|| -> Result<(Tensor, Aux)> {
            Ok(match *layer {
                LayerSpec::Conv { .. } => (conv2d_forward(&cur, p(Role::Kernel)?, p(Role::Bias)?)?, Aux::None),
                LayerSpec::SepConv { .. } => (
                    separable_conv2d_forward(&cur, p(Role::Depthwise)?, p(Role::Pointwise)?, p(Role::Bias)?)?,
                    Aux::None,
                ),
                LayerSpec::BatchNorm { epsilon, momentum } => {
                    let bn_mode = if train {
                        BatchNormMode::Train
                    } else {
                        BatchNormMode::Infer
                    };
                    let out = batch_norm_forward(
                        &cur,
                        p(Role::Gamma)?,
                        p(Role::Beta)?,
                        p(Role::RunningMean)?,
                        p(Role::RunningVar)?,
                        bn_mode,
                        epsilon,
                        momentum,
                    )?;
                    if let Some((m, v)) = out.running {
                        cache.running_updates.push((ParamKey::new(i, Role::RunningMean), m));
                        cache.running_updates.push((ParamKey::new(i, Role::RunningVar), v));
                    }
                    (out.y, out.cache.map_or(Aux::None, Aux::BatchNorm))
                }
                LayerSpec::Elu { alpha } => (elu(&cur, alpha), Aux::None),
                LayerSpec::MaxPool => {
                    let (y, arg) = max_pool_forward(&cur)?;
                    (y, Aux::Pool(arg))
                }
                LayerSpec::Dropout { rate } => {
                    let (seed, step) = match mode {
                        Mode::Train { seed, step } => (seed, step),
                        Mode::Infer => (0, 0),
                    };
                    let (y, mask) = dropout_forward(&cur, rate, seed, i, step, train);
                    (y, Aux::Dropout(mask))
                }
                LayerSpec::Flatten => {
                    let flat = cur.len() / n;
                    (Tensor::new(&[n, flat], cur.data().to_vec())?, Aux::None)
                }
                LayerSpec::Dense { .. } => (dense_forward(&cur, p(Role::Kernel)?, p(Role::Bias)?)?, Aux::None),
            })
        })()
        .map_err(|e| at_layer(i, layer, e))?;
        if train {
            cache.inputs.push(std::mem::replace(&mut cur, out));
            cache.aux.push(aux);
        } else {
            cur = out;
        }
        if let Some(acts) = cache.activations.as_mut() {
            acts.push(cur.clone());
        }
    }
    Ok((cur, cache))
}

/// Gradients of the loss with respect to every trainable parameter, given
/// the loss gradient `dpred` for the predictions of a training pass. The L2
/// term `2 * lambda * w` is included for kernels and weights.
pub fn model_backward(
    spec: &ModelSpec,
    params: &Parameters,
    cache: &ForwardCache,
    dpred: &Tensor,
) -> Result<Gradients> {
    if cache.mode == Mode::Infer {
        return Err(Error::InvalidState(
            "backward pass needs a cache from a training-mode forward pass".into(),
        ));
    }
    if cache.inputs.len() != spec.layers.len() {
        return Err(Error::InvalidState("forward cache does not match the model".into()));
    }
    let mut grads = Gradients::new();
    let mut g = dpred.clone();
    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let x = &cache.inputs[i];
        let p = |role| param(params, i, role);
        let mut put = |role, t: Tensor| {
            grads.insert(ParamKey::new(i, role), t);
        };
        g = (|| -> Result<Tensor> {
            Ok(match (layer, &cache.aux[i]) {
                (LayerSpec::Conv { .. }, _) => {
                    let (dx, dk, db) = conv2d_backward(x, p(Role::Kernel)?, &g)?;
                    put(Role::Kernel, dk);
                    put(Role::Bias, db);
                    dx
                }
                (LayerSpec::SepConv { .. }, _) => {
                    let (dx, ddw, dpw, db) =
                        separable_conv2d_backward(x, p(Role::Depthwise)?, p(Role::Pointwise)?, &g)?;
                    put(Role::Depthwise, ddw);
                    put(Role::Pointwise, dpw);
                    put(Role::Bias, db);
                    dx
                }
                (LayerSpec::BatchNorm { .. }, Aux::BatchNorm(bn)) => {
                    let (dx, dgamma, dbeta) = batch_norm_backward(bn, p(Role::Gamma)?, &g)?;
                    put(Role::Gamma, dgamma);
                    put(Role::Beta, dbeta);
                    dx
                }
                (LayerSpec::Elu { alpha }, _) => elu_backward(x, &g, *alpha),
                (LayerSpec::MaxPool, Aux::Pool(arg)) => max_pool_backward(arg, x.shape(), &g)?,
                (LayerSpec::Dropout { .. }, Aux::Dropout(mask)) => dropout_backward(mask.as_deref(), &g),
                (LayerSpec::Flatten, _) => g.clone().reshape(x.shape())?,
                (LayerSpec::Dense { .. }, _) => {
                    let (dx, dw, db) = dense_backward(x, p(Role::Kernel)?, &g)?;
                    put(Role::Kernel, dw);
                    put(Role::Bias, db);
                    dx
                }
                _ => return Err(Error::InvalidState("forward cache does not match the model".into())),
            })
        })()
        .map_err(|e| at_layer(i, layer, e))?;
    }
    if spec.l2_lambda > 0.0 {
        let scale = (2.0 * spec.l2_lambda) as f32;
        for (key, grad) in grads.iter_mut() {
            if key.role.regularized() {
                let w = &params[key];
                for (gv, &wv) in grad.data_mut().iter_mut().zip(w.data()) {
                    *gv += scale * wv;
                }
            }
        }
    }
    Ok(grads)
}

/// Inference-mode predictions, one per sample.
pub fn predict(spec: &ModelSpec, params: &Parameters, x: &Tensor) -> Result<Vec<f32>> {
    Ok(model_forward(spec, params, x, Mode::Infer, false)?.0.into_data())
}
