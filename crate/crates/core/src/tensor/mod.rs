//! Dense `f32` tensors, the kernels IMU-Net needs, a reverse-mode tape and
//! the Adam optimizer.
//!
//! Feature maps are laid out `[channels, rows, time]` in row-major order.
//! Every kernel checks its output for NaN/Inf and reports the offending op.

pub mod gradcheck;
mod graph;
pub mod ops;
mod params;

use std::fmt;

use thiserror::Error;

pub use graph::{Graph, NodeId};
pub use params::{AdamConfig, Gradients, ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape { op: &'static str, expected: String, got: String },
    #[error("{op}: time width {width} is not divisible by {k}")]
    NotDivisible { op: &'static str, width: usize, k: usize },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("class index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("{op}: invalid argument: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub(crate) fn shape_err(op: &'static str, expected: impl fmt::Debug, got: impl fmt::Debug) -> EngineError {
    EngineError::Shape {
        op,
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}

/// Row-major tensor with positive dimensions.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, EngineError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(EngineError::Invalid {
                op: "tensor",
                msg: format!("dimensions must be positive, got {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err("tensor", n, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
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

    /// Value of a one-element tensor.
    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, EngineError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// `(channels, rows, time)` of a rank-3 tensor.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize), EngineError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err(op, "[C, H, W]", &self.shape)),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub(crate) fn check_finite(t: &Tensor, op: &'static str) -> Result<(), EngineError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(EngineError::NonFinite { op })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn dims3_rejects_other_ranks() {
        let t = Tensor::zeros(&[4]);
        assert!(t.dims3("x").is_err());
        assert_eq!(Tensor::zeros(&[1, 6, 8]).dims3("x").unwrap(), (1, 6, 8));
    }
}
