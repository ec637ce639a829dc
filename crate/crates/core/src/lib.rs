//! Motion-gated handgun detection.
//!
//! * [`imgproc`]: PGM/PPM codec, grayscale, blur, frame differencing,
//!   thresholding, connected components, ROI resampling.
//! * [`nn`]: tensors, CNN layers with backward passes, SGD, gradient checks.
//! * [`models`]: the five-conv/three-dense classifier, checkpoints, prediction.
//! * [`transfer`]: training loop, head replacement, freezing, transfer runs.
//! * [`pipeline`]: motion gate, ROI classification, sliding windows, stream replay.
//! * [`metrics`]: confusion matrices and accuracy / precision / recall / F1.
//! * [`datagen`]: synthetic shape datasets, motion sequences, folder loading.

pub mod datagen;
pub mod exec;
pub mod imgproc;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod transfer;

pub use exec::ExecMode;
