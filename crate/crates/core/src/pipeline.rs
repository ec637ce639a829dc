//! Motion-gated detection: frame ring, triple differencing, blob proposals,
//! ROI classification, sliding windows and directory replay.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{read_gray, DataError};
use crate::exec::ExecMode;
use crate::imgproc::{
    box_blur, connected_components, resize, roi_resize, triple_diff, BBox, GrayImage, ImageError,
    Resample,
};
use crate::models::{image_to_tensor, Classifier, ModelError, Prediction};
use crate::nn::Tensor;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("frame {frame}: size {got:?} differs from {expected:?}")]
    FrameSize {
        frame: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{0}: no frame_NNNNNN.pgm files")]
    NoFrames(PathBuf),
    #[error("{window}x{window} window does not fit a {width}x{height} image at any scale")]
    WindowTooLarge {
        window: usize,
        width: usize,
        height: usize,
    },
    #[error("classifier expects input {0:?}; only single-channel images are supported")]
    UnsupportedInput(Vec<usize>),
    #[error("classifier has fewer than two classes")]
    NoPositiveClass,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("event log: {0}")]
    Log(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectMode {
    #[default]
    RegionProposals,
    SlidingWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Absolute-difference threshold (strictly greater counts as change).
    pub motion_threshold: u8,
    /// Box blur radius applied before differencing; 0 disables.
    pub blur_radius: usize,
    /// Blobs smaller than this many pixels are discarded.
    pub min_area: usize,
    /// Decision threshold on the positive-class probability.
    pub theta: f64,
    pub mode: DetectMode,
    pub stride: usize,
    pub scales: Vec<f64>,
    /// Suppression drops a box whose IoU with a kept box exceeds this.
    pub nms_iou: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            motion_threshold: 25,
            blur_radius: 1,
            min_area: 50,
            theta: 0.5,
            mode: DetectMode::RegionProposals,
            stride: 8,
            scales: vec![1.0, 0.75, 0.5],
            nms_iou: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.into()));
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad("theta must be in (0, 1]");
        }
        if self.stride == 0 {
            return bad("stride must be >= 1");
        }
        if self.mode == DetectMode::SlidingWindow && self.scales.is_empty() {
            return bad("sliding-window mode needs at least one scale");
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("scales must be positive");
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return bad("nms_iou must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    /// 1-based index of the frame the box refers to; 0 for still images.
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub prob: f64,
    pub label: String,
}

impl DetectionEvent {
    pub fn bbox(&self) -> BBox {
        BBox::rect(self.x, self.y, self.w, self.h)
    }
}

/// The last three frames, raw and blurred, plus a running frame count.
#[derive(Debug, Clone, Default)]
pub struct FrameRing {
    raw: VecDeque<GrayImage>,
    blurred: VecDeque<GrayImage>,
    count: usize,
}

impl FrameRing {
    pub fn new() -> Self {
        Self::default()
    }

    /// Frames fed so far.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_warm(&self) -> bool {
        self.raw.len() == 3
    }

    /// The `t` frame of the current triple, unblurred.
    pub fn middle(&self) -> Option<&GrayImage> {
        self.is_warm().then(|| &self.raw[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateResult {
    WarmingUp,
    /// Blobs found in the middle frame of the triple; empty means the
    /// classifier stage is skipped.
    Motion {
        frame: usize,
        boxes: Vec<BBox>,
    },
}

/// Pushes `frame` and, once three frames are buffered, differences them
/// and returns the motion blobs of the middle frame.
pub fn feed_frame(
    ring: &mut FrameRing,
    frame: GrayImage,
    cfg: &PipelineConfig,
) -> Result<GateResult, PipelineError> {
    if let Some(first) = ring.raw.front() {
        if first.dims() != frame.dims() {
            return Err(PipelineError::FrameSize {
                frame: ring.count + 1,
                expected: first.dims(),
                got: frame.dims(),
            });
        }
    }
    let blurred = if cfg.blur_radius > 0 {
        box_blur(&frame, cfg.blur_radius)
    } else {
        frame.clone()
    };
    if ring.raw.len() == 3 {
        ring.raw.pop_front();
        ring.blurred.pop_front();
    }
    ring.raw.push_back(frame);
    ring.blurred.push_back(blurred);
    ring.count += 1;
    if !ring.is_warm() {
        return Ok(GateResult::WarmingUp);
    }
    let b = &ring.blurred;
    let mask = triple_diff(&b[0], &b[1], &b[2], cfg.motion_threshold)?;
    Ok(GateResult::Motion {
        frame: ring.count - 1,
        boxes: connected_components(&mask, cfg.min_area),
    })
}

/// Counts every patch passed to the wrapped classifier.
pub struct CountingClassifier<'a, C: ?Sized> {
    inner: &'a C,
    calls: AtomicUsize,
}

impl<'a, C: Classifier + ?Sized> CountingClassifier<'a, C> {
    pub fn new(inner: &'a C) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn invocations(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<C: Classifier + ?Sized> Classifier for CountingClassifier<'_, C> {
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape()
    }

    fn labels(&self) -> Vec<String> {
        self.inner.labels()
    }

    fn predict_batch(
        &self,
        patches: &[Tensor],
        mode: ExecMode,
    ) -> Result<Vec<Prediction>, ModelError> {
        self.calls.fetch_add(patches.len(), Ordering::Relaxed);
        self.inner.predict_batch(patches, mode)
    }
}

/// Index and name of the class that raises events: the class labelled
/// "handgun" if present, otherwise class 1.
pub fn positive_class<C: Classifier + ?Sized>(net: &C) -> Result<(usize, String), PipelineError> {
    let labels = net.labels();
    if let Some(i) = labels.iter().position(|l| l == "handgun") {
        return Ok((i, labels[i].clone()));
    }
    let name = labels
        .get(1)
        .cloned()
        .unwrap_or_else(|| "handgun".to_string());
    Ok((1, name))
}

fn patch_size<C: Classifier + ?Sized>(net: &C) -> Result<(usize, usize), PipelineError> {
    match net.input_shape()[..] {
        [1, h, w] => Ok((w, h)),
        _ => Err(PipelineError::UnsupportedInput(net.input_shape())),
    }
}

fn score<C: Classifier + ?Sized>(
    net: &C,
    patches: &[Tensor],
    positive: usize,
    mode: ExecMode,
) -> Result<Vec<f64>, PipelineError> {
    net.predict_batch(patches, mode)?
        .into_iter()
        .map(|p| {
            p.probs
                .get(positive)
                .copied()
                .ok_or(PipelineError::NoPositiveClass)
        })
        .collect()
}

/// Resizes each box to the classifier input and emits an event when the
/// positive-class probability is at least `theta`.
pub fn classify_rois<C: Classifier + ?Sized>(
    frame: &GrayImage,
    frame_index: usize,
    boxes: &[BBox],
    net: &C,
    theta: f64,
) -> Result<Vec<DetectionEvent>, PipelineError> {
    if boxes.is_empty() {
        return Ok(Vec::new());
    }
    let (pw, ph) = patch_size(net)?;
    let (positive, label) = positive_class(net)?;
    let patches = boxes
        .iter()
        .map(|b| {
            Ok(image_to_tensor(&roi_resize(
                frame,
                b,
                pw,
                ph,
                Resample::Bilinear,
            )?))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let probs = score(net, &patches, positive, ExecMode::default())?;
    Ok(boxes
        .iter()
        .zip(probs)
        .filter(|(_, p)| *p >= theta)
        .map(|(b, prob)| DetectionEvent {
            frame: frame_index,
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            prob,
            label: label.clone(),
        })
        .collect())
}

/// Greedy suppression: highest probability first; a box is dropped when
/// its IoU with an already kept box exceeds `iou`. Ties keep scan order.
pub fn suppress(mut events: Vec<DetectionEvent>, iou: f64) -> Vec<DetectionEvent> {
    events.sort_by(|a, b| b.prob.total_cmp(&a.prob));
    let mut kept: Vec<DetectionEvent> = Vec::new();
    for e in events {
        if kept.iter().all(|k| k.bbox().iou(&e.bbox()) <= iou) {
            kept.push(e);
        }
    }
    kept
}

/// Window origins along one axis.
fn offsets(len: usize, window: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..=len - window).step_by(stride)
}

/// Scans classifier-sized windows over `image` at every configured scale.
/// Scales at which the window no longer fits are skipped. Boxes are
/// reported in original-image coordinates after suppression.
pub fn sliding_window_detect<C: Classifier + ?Sized>(
    image: &GrayImage,
    net: &C,
    cfg: &PipelineConfig,
    mode: ExecMode,
) -> Result<Vec<DetectionEvent>, PipelineError> {
    cfg.validate()?;
    let (pw, ph) = patch_size(net)?;
    let (positive, label) = positive_class(net)?;
    let (w, h) = image.dims();
    let mut boxes = Vec::new();
    let mut patches = Vec::new();
    for &s in &cfg.scales {
        let (sw, sh) = (
            (w as f64 * s).round() as usize,
            (h as f64 * s).round() as usize,
        );
        if sw < pw || sh < ph {
            continue;
        }
        let scaled = if (sw, sh) == (w, h) {
            image.clone()
        } else {
            resize(image, sw, sh, Resample::Bilinear)?
        };
        let (fx, fy) = (w as f64 / sw as f64, h as f64 / sh as f64);
        for y in offsets(sh, ph, cfg.stride) {
            for x in offsets(sw, pw, cfg.stride) {
                let ox = ((x as f64 * fx).round() as usize).min(w - 1);
                let oy = ((y as f64 * fy).round() as usize).min(h - 1);
                let bw = ((pw as f64 * fx).round() as usize).clamp(1, w - ox);
                let bh = ((ph as f64 * fy).round() as usize).clamp(1, h - oy);
                boxes.push(BBox::rect(ox, oy, bw, bh));
                let data = (0..ph)
                    .flat_map(|r| (0..pw).map(move |c| (r, c)))
                    .map(|(r, c)| f64::from(scaled.get(x + c, y + r)) / 255.0)
                    .collect();
                patches.push(Tensor::new(vec![1, ph, pw], data).expect("patch dims"));
            }
        }
    }
    if patches.is_empty() {
        return Err(PipelineError::WindowTooLarge {
            window: pw.max(ph),
            width: w,
            height: h,
        });
    }
    let probs = score(net, &patches, positive, mode)?;
    let events = boxes
        .into_iter()
        .zip(probs)
        .filter(|(_, p)| *p >= cfg.theta)
        .map(|(b, prob)| DetectionEvent {
            frame: 0,
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            prob,
            label: label.clone(),
        })
        .collect();
    Ok(suppress(events, cfg.nms_iou))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub frames: usize,
    /// Frames whose motion gate produced at least one blob.
    pub gate_passes: usize,
    pub events: usize,
    /// Patches handed to the classifier.
    pub classifier_invocations: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamReport {
    pub summary: StreamSummary,
    pub events: Vec<DetectionEvent>,
}

/// Runs frames in order through the gate and the classifier. Events are
/// also written to `log` as JSON lines when given.
pub fn run_sequence<C, I>(
    frames: I,
    net: &C,
    cfg: &PipelineConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<StreamReport, PipelineError>
where
    C: Classifier + ?Sized,
    I: IntoIterator<Item = Result<GrayImage, PipelineError>>,
{
    cfg.validate()?;
    let counter = CountingClassifier::new(net);
    let mut ring = FrameRing::new();
    let mut report = StreamReport::default();
    for frame in frames {
        let gate = feed_frame(&mut ring, frame?, cfg)?;
        report.summary.frames += 1;
        let GateResult::Motion { frame, boxes } = gate else {
            continue;
        };
        if boxes.is_empty() {
            continue;
        }
        report.summary.gate_passes += 1;
        let middle = ring.middle().expect("warm ring");
        let events = classify_rois(middle, frame, &boxes, &counter, cfg.theta)?;
        if let Some(w) = log.as_deref_mut() {
            for e in &events {
                serde_json::to_writer(&mut *w, e).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
        }
        report.events.extend(events);
    }
    report.summary.events = report.events.len();
    report.summary.classifier_invocations = counter.invocations();
    Ok(report)
}

/// `frame_NNNNNN.pgm` files of `dir` in index order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, PipelineError> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| DataError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| DataError::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("frame_") && name.ends_with(".pgm") {
            frames.push(path);
        }
    }
    if frames.is_empty() {
        return Err(PipelineError::NoFrames(dir.to_path_buf()));
    }
    frames.sort();
    Ok(frames)
}

/// Replays a directory of frames; see [`run_sequence`].
pub fn run_stream<C: Classifier + ?Sized>(
    frame_dir: impl AsRef<Path>,
    net: &C,
    cfg: &PipelineConfig,
    log: Option<&mut dyn Write>,
) -> Result<StreamReport, PipelineError> {
    let paths = list_frames(frame_dir)?;
    let frames = paths
        .iter()
        .map(|p| read_gray(p).map_err(PipelineError::from));
    run_sequence(frames, net, cfg, log)
}
