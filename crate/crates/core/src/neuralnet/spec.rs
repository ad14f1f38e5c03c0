use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One layer of a sequential model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Same-padded, stride-1 `kernel x kernel` convolution.
    Conv {
        out_channels: usize,
        kernel: usize,
    },
    /// Depthwise `kernel x kernel` filter followed by pointwise mixing.
    SepConv {
        out_channels: usize,
        kernel: usize,
    },
    BatchNorm {
        epsilon: f64,
        momentum: f64,
    },
    Elu {
        alpha: f64,
    },
    /// 2x2 window, stride 2.
    MaxPool,
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Fully connected; with no activation after it this is the linear head.
    Dense {
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::SepConv { .. } => "sepconv",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Elu { .. } => "elu",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn is_convolution(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::SepConv { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        match *self {
            LayerSpec::Conv { out_channels, kernel } | LayerSpec::SepConv { out_channels, kernel } => {
                if kernel % 2 == 0 {
                    return bad(format!("kernel size must be odd, got {kernel}"));
                }
                if out_channels == 0 {
                    return bad("convolution needs at least one output channel".into());
                }
            }
            LayerSpec::BatchNorm { epsilon, momentum } => {
                if !(epsilon > 0.0) {
                    return bad(format!("batch norm epsilon must be positive, got {epsilon}"));
                }
                if !(0.0..=1.0).contains(&momentum) {
                    return bad(format!("batch norm momentum must lie in [0, 1], got {momentum}"));
                }
            }
            LayerSpec::Elu { alpha } => {
                if !(alpha > 0.0) {
                    return bad(format!("ELU alpha must be positive, got {alpha}"));
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad(format!("dropout rate must lie in [0, 1), got {rate}"));
                }
            }
            LayerSpec::Dense { out_features } => {
                if out_features == 0 {
                    return bad("dense layer needs at least one output".into());
                }
            }
            LayerSpec::MaxPool | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = || -> Result<(usize, usize, usize)> {
            match *input {
                [h, w, c] => Ok((h, w, c)),
                _ => Err(Error::shape(format!(
                    "{} expects an (H, W, C) input, got {input:?}",
                    self.name()
                ))),
            }
        };
        Ok(match *self {
            LayerSpec::Conv { out_channels, .. } | LayerSpec::SepConv { out_channels, .. } => {
                let (h, w, _) = spatial()?;
                vec![h, w, out_channels]
            }
            LayerSpec::MaxPool => {
                let (h, w, c) = spatial()?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::shape(format!(
                        "2x2 pooling needs even spatial dims, got {h}x{w}"
                    )));
                }
                vec![h / 2, w / 2, c]
            }
            LayerSpec::Flatten => vec![input.iter().product()],
            LayerSpec::Dense { out_features } => match *input {
                [_] => vec![out_features],
                _ => return Err(Error::shape(format!("dense layer expects a flat input, got {input:?}"))),
            },
            LayerSpec::BatchNorm { .. } | LayerSpec::Elu { .. } | LayerSpec::Dropout { .. } => input.to_vec(),
        })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out_channels, kernel } => write!(f, "conv{out_channels}_{kernel}x{kernel}"),
            LayerSpec::SepConv { out_channels, kernel } => write!(f, "sepconv{out_channels}_{kernel}x{kernel}"),
            LayerSpec::Dense { out_features } => write!(f, "dense{out_features}"),
            other => f.write_str(other.name()),
        }
    }
}

/// A sequential regression model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Per-sample input `(H, W, C)`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub l2_lambda: f64,
}

impl ModelSpec {
    /// Per-sample output shape of every layer, in order.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .validate()
                .map_err(|e| Error::invalid(format!("layer {i} ({}): {e}", layer.name())))?;
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", layer.name())))?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Checks layer parameters, shape flow and the scalar head.
    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::invalid(format!(
                "input dims must be positive, got {:?}",
                self.input
            )));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "l2_lambda must be >= 0, got {}",
                self.l2_lambda
            )));
        }
        let shapes = self.layer_shapes()?;
        match shapes.last().map(Vec::as_slice) {
            Some([1]) => Ok(()),
            other => Err(Error::invalid(format!(
                "model must end in a single scalar per sample, ends in {other:?}"
            ))),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.input[2]
    }

    pub fn convolution_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_convolution())
            .collect()
    }
}

/// Hyperparameters of the default sequential regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub base_filters: usize,
    pub dense_units: [usize; 2],
    pub dropout: f64,
    pub l2_lambda: f64,
    pub kernel: usize,
    pub elu_alpha: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            base_filters: 32,
            dense_units: [256, 64],
            dropout: 0.3,
            l2_lambda: 1e-4,
            kernel: 3,
            elu_alpha: 1.0,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl Architecture {
    /// Three blocks of two convolutions (plain, then separable at double and
    /// quadruple width), each convolution followed by batch norm and ELU and
    /// each block by 2x2 pooling, then a dense head ending in one linear unit.
    pub fn build(&self, input: [usize; 3]) -> Result<ModelSpec> {
        let f = self.base_filters;
        let k = self.kernel;
        let mut layers = Vec::new();
        let bn = LayerSpec::BatchNorm {
            epsilon: self.bn_epsilon,
            momentum: self.bn_momentum,
        };
        let act = LayerSpec::Elu { alpha: self.elu_alpha };
        for (block, width) in [f, 2 * f, 4 * f].into_iter().enumerate() {
            for _ in 0..2 {
                layers.push(if block == 0 {
                    LayerSpec::Conv {
                        out_channels: width,
                        kernel: k,
                    }
                } else {
                    LayerSpec::SepConv {
                        out_channels: width,
                        kernel: k,
                    }
                });
                layers.push(bn.clone());
                layers.push(act.clone());
            }
            layers.push(LayerSpec::MaxPool);
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense {
            out_features: self.dense_units[0],
        });
        layers.push(act.clone());
        layers.push(LayerSpec::Dropout { rate: self.dropout });
        layers.push(LayerSpec::Dense {
            out_features: self.dense_units[1],
        });
        layers.push(act);
        layers.push(LayerSpec::Dense { out_features: 1 });
        let spec = ModelSpec {
            input,
            layers,
            l2_lambda: self.l2_lambda,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_architecture_counts() {
        let spec = Architecture::default().build([128, 128, 3]).unwrap();
        assert_eq!(spec.convolution_layers().len(), 6);
        let dense = spec
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dense { .. }))
            .count();
        assert_eq!(dense, 3);
        let pools = spec.layers.iter().filter(|l| **l == LayerSpec::MaxPool).count();
        assert_eq!(pools, 3);
        assert_eq!(spec.layer_shapes().unwrap().last().unwrap(), &vec![1]);
        // pooling follows every second convolution
        let convs = spec.convolution_layers();
        for pair in convs.chunks(2) {
            let after = &spec.layers[pair[1] + 3];
            assert_eq!(after, &LayerSpec::MaxPool);
        }
    }

    #[test]
    fn serde_roundtrip() {
        let spec = Architecture::default().build([64, 64, 1]).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"type\":\"sep_conv\""));
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn invalid_layers_rejected() {
        assert!(LayerSpec::Conv {
            out_channels: 4,
            kernel: 2
        }
        .validate()
        .is_err());
        assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
        assert!(LayerSpec::Elu { alpha: 0.0 }.validate().is_err());
        assert!(LayerSpec::BatchNorm {
            epsilon: 0.0,
            momentum: 0.9
        }
        .validate()
        .is_err());
        let spec = ModelSpec {
            input: [6, 6, 1],
            layers: vec![LayerSpec::MaxPool, LayerSpec::MaxPool],
            l2_lambda: 0.0,
        };
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
        let no_head = ModelSpec {
            input: [4, 4, 1],
            layers: vec![LayerSpec::Flatten],
            l2_lambda: 0.0,
        };
        assert!(no_head.validate().is_err());
    }
}
