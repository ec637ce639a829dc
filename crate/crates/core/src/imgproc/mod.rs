//! Image primitives for the motion stage: PGM/PPM codec, grayscale
//! conversion, box blur, frame differencing, thresholding, connected
//! components and ROI resampling.

mod components;
mod filters;
mod image;
mod pnm;
mod resize;

use thiserror::Error;

pub use components::{connected_components, label_components};
pub use filters::{abs_diff, binarize, box_blur, mask_and, to_grayscale, triple_diff};
pub use image::{BBox, BinaryImage, GrayImage, RgbImage};
pub use pnm::{decode_pnm, encode_pgm, encode_pnm, encode_ppm, PnmErrorKind, PnmImage};
pub use resize::{crop, resize, roi_resize, Resample};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("image must be at least 1x1")]
    EmptyImage,
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("binary image pixel {index} has value {value}")]
    NotBinary { index: usize, value: u8 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("box {bbox:?} outside {width}x{height} image")]
    BoxOutOfBounds {
        bbox: BBox,
        width: usize,
        height: usize,
    },
    #[error("pnm decode error at byte {offset}: {kind}")]
    Decode { offset: usize, kind: PnmErrorKind },
}
