use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::neuralnet::{Gradients, ParamKey, Parameters, Tensor};
use crate::{Error, Result};

/// Update rule and its fixed coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd() -> Self {
        Optimizer::Sgd { momentum: 0.9 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd { .. } => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }

    fn slots(&self) -> &'static [&'static str] {
        match self {
            Optimizer::Sgd { .. } => &["velocity"],
            Optimizer::Adam { .. } => &["m", "v"],
        }
    }
}

/// Per-parameter moment tensors and the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// For each trainable key: `[velocity]` for SGD, `[m, v]` for Adam.
    pub slots: BTreeMap<ParamKey, Vec<Tensor>>,
}

impl OptimizerState {
    /// Zeroed state for every trainable parameter.
    pub fn new(optimizer: &Optimizer, params: &Parameters) -> Self {
        let n = optimizer.slots().len();
        let slots = params
            .iter()
            .filter(|(k, _)| k.role.trainable())
            .map(|(k, t)| (*k, vec![Tensor::zeros(t.shape()); n]))
            .collect();
        OptimizerState { step: 0, slots }
    }

    pub fn slot_names(optimizer: &Optimizer) -> &'static [&'static str] {
        optimizer.slots()
    }
}

fn check(params: &Parameters, grads: &Gradients, state: &OptimizerState, slots: usize) -> Result<()> {
    for (key, slot) in &state.slots {
        let p = params
            .get(key)
            .ok_or_else(|| Error::InvalidState(format!("optimizer tracks unknown parameter {key}")))?;
        let g = grads
            .get(key)
            .ok_or_else(|| Error::InvalidState(format!("missing gradient for {key}")))?;
        if slot.len() != slots || slot.iter().any(|s| s.shape() != p.shape()) || g.shape() != p.shape() {
            return Err(Error::InvalidState(format!("optimizer state for {key} does not match")));
        }
    }
    if let Some(k) = grads.keys().find(|k| !state.slots.contains_key(k)) {
        return Err(Error::InvalidState(format!("gradient for untracked parameter {k}")));
    }
    Ok(())
}

/// Bias-corrected Adam, applied in key order.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    check(params, grads, state, 2)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (key, slot) in state.slots.iter_mut() {
        let g = grads[key].data();
        let [m, v] = slot.as_mut_slice() else { unreachable!() };
        let p = params.get_mut(key).expect("checked").data_mut();
        for (((pv, &gv), mv), vv) in p.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
            let gv = gv as f64;
            let m1 = beta1 * *mv as f64 + (1.0 - beta1) * gv;
            let v1 = beta2 * *vv as f64 + (1.0 - beta2) * gv * gv;
            *mv = m1 as f32;
            *vv = v1 as f32;
            let update = lr * (m1 / c1) / ((v1 / c2).sqrt() + epsilon);
            *pv = (*pv as f64 - update) as f32;
        }
    }
    Ok(())
}

/// `velocity = momentum * velocity + grad; param -= lr * velocity`.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check(params, grads, state, 1)?;
    state.step += 1;
    for (key, slot) in state.slots.iter_mut() {
        let g = grads[key].data();
        let p = params.get_mut(key).expect("checked").data_mut();
        for ((pv, &gv), vel) in p.iter_mut().zip(g).zip(slot[0].data_mut()) {
            let v1 = momentum * *vel as f64 + gv as f64;
            *vel = v1 as f32;
            *pv = (*pv as f64 - lr * v1) as f32;
        }
    }
    Ok(())
}

/// Dispatches to the configured update rule.
pub fn optimizer_step(
    optimizer: &Optimizer,
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    match *optimizer {
        Optimizer::Sgd { momentum } => sgd_step(params, grads, state, lr, momentum),
        Optimizer::Adam { beta1, beta2, epsilon } => adam_step(params, grads, state, lr, beta1, beta2, epsilon),
    }
}
