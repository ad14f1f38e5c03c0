use crate::{Error, Result};

/// Row-major `f32` tensor. Image batches use NHWC layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::shape("tensor shape must be nonempty"));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        assert!(!shape.is_empty(), "tensor shape must be nonempty");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar_column(values: &[f32]) -> Self {
        Self {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.is_empty() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(Error::shape(format!(
                "expected an NHWC tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [n, d] => Ok((n, d)),
            _ => Err(Error::shape(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Item `i` along the leading (batch) dimension.
    pub fn item(&self, i: usize) -> &[f32] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&v| v as f64 * v as f64).sum()
    }
}
