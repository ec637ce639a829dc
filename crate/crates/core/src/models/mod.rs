//! Network architectures, checkpoint files and prediction.

mod arch;
mod checkpoint;
mod predict;

use thiserror::Error;

pub use arch::{
    build_mini_backbone, build_paper_cnn, build_paper_cnn_at, paper_cnn_layers,
    paper_cnn_param_count, INPUT_SIZE,
};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CheckpointError,
    CheckpointMeta, MAGIC, VERSION,
};
pub use predict::{image_to_tensor, predict, Classifier, Prediction};

use crate::nn::NnError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}
