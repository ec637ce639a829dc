//! Synthetic frame sequences: a bright square translating over black.

use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};

use super::DataError;
use crate::imgproc::{encode_pgm, BBox, GrayImage};
use crate::nn::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSpec {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    /// Side length of the square.
    pub size: usize,
    /// Pixels per frame.
    pub velocity: (i64, i64),
    /// Top-left corner in the first frame.
    pub start: (i64, i64),
    /// Fraction of the 0..255 range.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            n_frames: 20,
            size: 12,
            velocity: (2, 0),
            start: (8, 26),
            noise_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<GrayImage>,
    /// Ground-truth square per frame.
    pub truth: Vec<BBox>,
}

const STRIPE_HI: u8 = 255;
const STRIPE_LO: u8 = 120;

/// Square texture: stripes across the direction of motion whose width equals
/// the per-frame displacement, so each pixel of the object changes between
/// consecutive frames. Static squares are solid.
fn texel(spec: &MotionSpec, lx: usize, ly: usize) -> u8 {
    let (vx, vy) = (
        spec.velocity.0.unsigned_abs() as usize,
        spec.velocity.1.unsigned_abs() as usize,
    );
    let band = if vx > 0 {
        lx / vx
    } else if vy > 0 {
        ly / vy
    } else {
        return STRIPE_HI;
    };
    if band % 2 == 0 {
        STRIPE_HI
    } else {
        STRIPE_LO
    }
}

pub fn render_motion_sequence(spec: &MotionSpec) -> Result<MotionSequence, DataError> {
    if spec.n_frames == 0 || spec.size == 0 || spec.width == 0 || spec.height == 0 {
        return Err(DataError::InvalidSpec(
            "frames, size and dimensions must be >= 1".into(),
        ));
    }
    let mut truth = Vec::with_capacity(spec.n_frames);
    for i in 0..spec.n_frames as i64 {
        let x = spec.start.0 + spec.velocity.0 * i;
        let y = spec.start.1 + spec.velocity.1 * i;
        if x < 0
            || y < 0
            || x as usize + spec.size > spec.width
            || y as usize + spec.size > spec.height
        {
            return Err(DataError::TrajectoryEscapes {
                frame: i as usize + 1,
                x,
                y,
            });
        }
        truth.push(BBox::rect(x as usize, y as usize, spec.size, spec.size));
    }
    let mut rng = rng_from_seed(spec.seed);
    let noise = (spec.noise_std > 0.0)
        .then(|| Normal::new(0.0, spec.noise_std * 255.0).expect("positive std"));
    let frames = truth
        .iter()
        .map(|b| {
            GrayImage::from_fn(spec.width, spec.height, |x, y| {
                let inside = x >= b.x && x < b.right() && y >= b.y && y < b.bottom();
                let base = if inside {
                    texel(spec, x - b.x, y - b.y)
                } else {
                    0
                };
                match &noise {
                    Some(n) => (f64::from(base) + n.sample(&mut rng))
                        .round()
                        .clamp(0.0, 255.0) as u8,
                    None => base,
                }
            })
            .expect("non-empty")
        })
        .collect();
    Ok(MotionSequence { frames, truth })
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionManifest {
    pub frame_paths: Vec<PathBuf>,
    pub truth_path: PathBuf,
    pub truth: Vec<BBox>,
}

/// Writes `frame_000001.pgm ...` and `truth.csv` (`frame,x,y,w,h`).
pub fn gen_motion_sequence(
    spec: &MotionSpec,
    out_dir: impl AsRef<Path>,
) -> Result<MotionManifest, DataError> {
    let seq = render_motion_sequence(spec)?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut frame_paths = Vec::with_capacity(seq.frames.len());
    for (i, f) in seq.frames.iter().enumerate() {
        let p = dir.join(frame_file_name(i + 1));
        fs::write(&p, encode_pgm(f)).map_err(|e| DataError::io(&p, e))?;
        frame_paths.push(p);
    }
    let truth_path = dir.join("truth.csv");
    let mut w = csv::Writer::from_path(&truth_path).map_err(|e| DataError::csv(&truth_path, e))?;
    w.write_record(["frame", "x", "y", "w", "h"])
        .map_err(|e| DataError::csv(&truth_path, e))?;
    for (i, b) in seq.truth.iter().enumerate() {
        w.write_record([i + 1, b.x, b.y, b.w, b.h].iter().map(|v| v.to_string()))
            .map_err(|e| DataError::csv(&truth_path, e))?;
    }
    w.flush().map_err(|e| DataError::io(&truth_path, e))?;
    Ok(MotionManifest {
        frame_paths,
        truth_path,
        truth: seq.truth,
    })
}
