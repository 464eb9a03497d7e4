//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations eagerly; [`Graph::backward`] walks the tape
//! in reverse and accumulates parameter gradients into a [`ParamStore`].
//! Shapes are row-major; most ops act on matrices (`[rows, cols]`).

mod gemm;
mod gradcheck;
mod graph;
pub mod layers;
mod optim;
mod params;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var, BATCH_NORM_EPS};
pub use optim::{Adam, AdamConfig, PlateauScheduler};
pub use params::{Checkpoint, CheckpointTensor, Init, ParamId, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum AdError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: index {index} out of range 0..{bound}")]
    Index { op: &'static str, index: usize, bound: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    /// A failure inside a caller-supplied forward pass.
    #[error("forward pass: {0}")]
    Forward(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data` does not match the shape; callers construct both.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data does not match shape {shape:?}");
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(vec![rows, cols], data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
