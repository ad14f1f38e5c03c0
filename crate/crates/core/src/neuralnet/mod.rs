//! A small sequential network with explicit forward and backward passes.

mod dump;
mod gemm;
mod layers;
mod model;
mod params;
mod spec;
mod tensor;

pub use dump::{activation_grid, dump_activations};
pub use layers::*;
pub use model::{model_backward, model_forward, predict, ForwardCache, Mode};
pub use params::{
    check_parameters, init_parameters, l2_penalty, layer_param_shapes, parameter_shapes, Gradients, ParamKey,
    Parameters, Role,
};
pub use spec::{Architecture, LayerSpec, ModelSpec};
pub use tensor::Tensor;
