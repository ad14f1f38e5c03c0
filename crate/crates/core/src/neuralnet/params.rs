use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{LayerSpec, ModelSpec, Tensor};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Kernel,
    Bias,
    Gamma,
    Beta,
    Depthwise,
    Pointwise,
    RunningMean,
    RunningVar,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::Kernel,
        Role::Bias,
        Role::Gamma,
        Role::Beta,
        Role::Depthwise,
        Role::Pointwise,
        Role::RunningMean,
        Role::RunningVar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Kernel => "kernel",
            Role::Bias => "bias",
            Role::Gamma => "gamma",
            Role::Beta => "beta",
            Role::Depthwise => "depthwise",
            Role::Pointwise => "pointwise",
            Role::RunningMean => "running_mean",
            Role::RunningVar => "running_var",
        }
    }

    /// Running statistics are state, not trainable parameters.
    pub fn trainable(self) -> bool {
        !matches!(self, Role::RunningMean | Role::RunningVar)
    }

    /// Roles that receive the L2 penalty.
    pub fn regularized(self) -> bool {
        matches!(self, Role::Kernel | Role::Depthwise | Role::Pointwise)
    }
}

/// Identifies a tensor by the index of its layer and its role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub layer: usize,
    pub role: Role,
}

impl ParamKey {
    pub fn new(layer: usize, role: Role) -> Self {
        ParamKey { layer, role }
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer, self.role.as_str())
    }
}

impl FromStr for ParamKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed parameter name {s:?}"));
        let (layer, role) = s.split_once('.').ok_or_else(bad)?;
        let layer = layer.parse().map_err(|_| bad())?;
        let role = Role::ALL.into_iter().find(|r| r.as_str() == role).ok_or_else(bad)?;
        Ok(ParamKey { layer, role })
    }
}

pub type Parameters = BTreeMap<ParamKey, Tensor>;
pub type Gradients = BTreeMap<ParamKey, Tensor>;

/// Shapes of every tensor a layer owns, given its per-sample input shape.
pub fn layer_param_shapes(layer: &LayerSpec, input: &[usize]) -> Vec<(Role, Vec<usize>)> {
    let channels = input.last().copied().unwrap_or(0);
    match *layer {
        LayerSpec::Conv { out_channels, kernel } => vec![
            (Role::Kernel, vec![kernel, kernel, channels, out_channels]),
            (Role::Bias, vec![out_channels]),
        ],
        LayerSpec::SepConv { out_channels, kernel } => vec![
            (Role::Depthwise, vec![kernel, kernel, channels]),
            (Role::Pointwise, vec![1, 1, channels, out_channels]),
            (Role::Bias, vec![out_channels]),
        ],
        LayerSpec::BatchNorm { .. } => [Role::Gamma, Role::Beta, Role::RunningMean, Role::RunningVar]
            .into_iter()
            .map(|r| (r, vec![channels]))
            .collect(),
        LayerSpec::Dense { out_features } => vec![
            (Role::Kernel, vec![channels, out_features]),
            (Role::Bias, vec![out_features]),
        ],
        LayerSpec::Elu { .. } | LayerSpec::MaxPool | LayerSpec::Dropout { .. } | LayerSpec::Flatten => Vec::new(),
    }
}

/// Every tensor the model needs, keyed and shaped.
pub fn parameter_shapes(spec: &ModelSpec) -> Result<Vec<(ParamKey, Vec<usize>)>> {
    spec.validate()?;
    let mut input = spec.input.to_vec();
    let mut out = Vec::new();
    for (i, (layer, shape)) in spec.layers.iter().zip(spec.layer_shapes()?).enumerate() {
        for (role, s) in layer_param_shapes(layer, &input) {
            out.push((ParamKey::new(i, role), s));
        }
        input = shape;
    }
    Ok(out)
}

/// He-uniform kernels (bound `sqrt(6 / fan_in)`), zero biases and betas,
/// unit gammas and running variances, zero running means. Each tensor draws
/// from its own stream keyed by `(seed, layer, role)`.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> Result<Parameters> {
    let mut params = Parameters::new();
    for (key, shape) in parameter_shapes(spec)? {
        let t = match key.role {
            Role::Kernel | Role::Depthwise | Role::Pointwise => {
                let fan_in: usize = match key.role {
                    Role::Depthwise => shape[0] * shape[1],
                    _ => shape[..shape.len() - 1].iter().product(),
                };
                let bound = (6.0 / fan_in as f64).sqrt() as f32;
                let mut rng = seed::rng(&[seed, key.layer as u64, key.role as u64]);
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                Tensor::new(&shape, data)?
            }
            Role::Gamma | Role::RunningVar => Tensor::filled(&shape, 1.0),
            Role::Bias | Role::Beta | Role::RunningMean => Tensor::zeros(&shape),
        };
        params.insert(key, t);
    }
    Ok(params)
}

/// `lambda * sum(w^2)` over kernels and weights only.
pub fn l2_penalty(params: &Parameters, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda
        * params
            .iter()
            .filter(|(k, _)| k.role.regularized())
            .map(|(_, t)| t.sum_sq())
            .sum::<f64>()
}

/// Confirms `params` holds exactly the tensors `spec` needs.
pub fn check_parameters(spec: &ModelSpec, params: &Parameters) -> Result<()> {
    let shapes = parameter_shapes(spec)?;
    for (key, shape) in &shapes {
        match params.get(key) {
            None => return Err(Error::invalid(format!("missing parameter {key}"))),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::shape(format!(
                    "parameter {key} has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            }
            _ => {}
        }
    }
    if params.len() != shapes.len() {
        return Err(Error::invalid("parameters contain tensors the model does not use"));
    }
    Ok(())
}
