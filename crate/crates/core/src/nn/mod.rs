//! A small CPU tensor and CNN engine: layer kernels with exact backward
//! passes, sequential networks, SGD with momentum and gradient checking.

mod gemm;
mod gradcheck;
mod layers;
mod network;
mod optim;
pub mod rng;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, kink_margin, relative_error, GradCheckOptions, GradCheckReport};
pub use layers::{
    conv2d_backward, conv2d_backward_batch, conv2d_forward, conv2d_forward_batch, cross_entropy,
    dense_backward, dense_backward_batch, dense_forward, dense_forward_batch, maxpool2x2_backward,
    maxpool2x2_forward, relu_backward, relu_forward, softmax, softmax_batch,
};
pub(crate) use network::layer_seed;
pub use network::{he_init, Layer, LayerSpec, Network, NetworkMeta};
pub use optim::sgd_step;
pub use rng::{rng_for_stream, rng_from_seed, Rng};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("maxpool2x2 needs even spatial dims, got {height}x{width}")]
    OddPoolInput { height: usize, width: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("empty batch")]
    EmptyBatch,
}
