//! Detection with small networks overfit on a planted target.

use handgun_core::datagen::{render_motion_sequence, render_shape, Family, MotionSpec, Pose};
use handgun_core::exec::ExecMode;
use handgun_core::imgproc::{roi_resize, BBox, GrayImage, Resample};
use handgun_core::models::{build_paper_cnn_at, image_to_tensor};
use handgun_core::nn::{rng_from_seed, Network};
use handgun_core::pipeline::{
    classify_rois, feed_frame, run_sequence, sliding_window_detect, FrameRing, GateResult,
    PipelineConfig,
};
use handgun_core::transfer::{train, Sample, TrainConfig};
use rand::Rng as _;

const WIN: usize = 8;

fn target() -> GrayImage {
    render_shape(
        Family::LShape,
        Pose::CENTERED,
        WIN,
        0.0,
        &mut rng_from_seed(0),
    )
}

fn noise_patch(seed: u64, max: u8) -> GrayImage {
    let mut rng = rng_from_seed(seed);
    GrayImage::from_fn(WIN, WIN, |_, _| rng.gen_range(0..=max)).unwrap()
}

fn fit(positives: &[GrayImage], negatives: &[GrayImage]) -> Network {
    let mut samples = Vec::new();
    for (label, set) in [(0, negatives), (1, positives)] {
        samples.extend(set.iter().map(|img| Sample {
            input: image_to_tensor(img),
            label,
        }));
    }
    let mut net = build_paper_cnn_at(2, 1, WIN, 3).unwrap();
    net.meta.labels = vec!["background".into(), "handgun".into()];
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 8,
        stop_at: Some(1.0),
        ..Default::default()
    };
    let report = train(&mut net, &samples, None, &cfg).unwrap();
    assert_eq!(report.epochs.last().unwrap().train_acc, 1.0);
    net
}

fn target_net() -> Network {
    let positives = vec![target(); 8];
    let mut negatives: Vec<GrayImage> = (0..8).map(|s| noise_patch(s, 40)).collect();
    negatives.push(GrayImage::filled(WIN, WIN, 0).unwrap());
    negatives.push(GrayImage::filled(WIN, WIN, 16).unwrap());
    fit(&positives, &negatives)
}

fn plant(img: &mut GrayImage, x0: usize, y0: usize, patch: &GrayImage) {
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            img.set(x0 + x, y0 + y, patch.get(x, y));
        }
    }
}

#[test]
fn planted_roi_gives_exactly_one_event() {
    let net = target_net();
    let mut frame = GrayImage::filled(64, 48, 0).unwrap();
    plant(&mut frame, 24, 16, &target());
    let boxes = [
        BBox::rect(24, 16, 8, 8),
        BBox::rect(0, 0, 8, 8),
        BBox::rect(50, 30, 8, 8),
    ];
    let events = classify_rois(&frame, 7, &boxes, &net, 0.5).unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!((events[0].frame, events[0].bbox()), (7, boxes[0]));
    assert_eq!(events[0].label, "handgun");
    assert!(classify_rois(&frame, 7, &boxes, &net, 1.0).unwrap().len() <= 1);
}

#[test]
fn sliding_windows_find_both_targets_and_nothing_on_blank() {
    let net = target_net();
    let cfg = PipelineConfig {
        stride: 8,
        scales: vec![1.0],
        ..Default::default()
    };
    let blank = GrayImage::filled(64, 32, 0).unwrap();
    assert!(
        sliding_window_detect(&blank, &net, &cfg, ExecMode::Sequential)
            .unwrap()
            .is_empty()
    );

    let mut img = blank.clone();
    plant(&mut img, 8, 8, &target());
    plant(&mut img, 40, 16, &target());
    let seq = sliding_window_detect(&img, &net, &cfg, ExecMode::Sequential).unwrap();
    let par = sliding_window_detect(&img, &net, &cfg, ExecMode::Parallel).unwrap();
    assert_eq!(seq, par);
    let mut boxes: Vec<BBox> = seq.iter().map(|e| e.bbox()).collect();
    boxes.sort_by_key(|b| b.x);
    assert_eq!(boxes, [BBox::rect(8, 8, 8, 8), BBox::rect(40, 16, 8, 8)]);
}

/// Gate ROIs of a sequence, resized to the network input.
fn gate_rois(spec: &MotionSpec) -> Vec<GrayImage> {
    let seq = render_motion_sequence(spec).unwrap();
    let cfg = PipelineConfig::default();
    let mut ring = FrameRing::new();
    let mut out = Vec::new();
    for f in seq.frames {
        if let GateResult::Motion { boxes, .. } = feed_frame(&mut ring, f, &cfg).unwrap() {
            let mid = ring.middle().unwrap();
            for b in boxes {
                out.push(roi_resize(mid, &b, WIN, WIN, Resample::Bilinear).unwrap());
            }
        }
    }
    out
}

#[test]
fn moving_target_raises_events_inside_motion_interval() {
    let train_spec = MotionSpec {
        start: (4, 10),
        velocity: (2, 1),
        ..Default::default()
    };
    let positives = gate_rois(&train_spec);
    assert!(!positives.is_empty());
    let negatives: Vec<GrayImage> = (0..positives.len() as u64)
        .map(|s| noise_patch(s, 60))
        .collect();
    let net = fit(&positives, &negatives);

    // frames 1-6 are identical; the square moves from frame 7 on
    let moving = render_motion_sequence(&MotionSpec {
        start: (20, 30),
        ..Default::default()
    })
    .unwrap();
    let mut frames: Vec<GrayImage> = vec![moving.frames[0].clone(); 5];
    frames.extend(moving.frames.iter().cloned());
    let report = run_sequence(
        frames.into_iter().map(Ok),
        &net,
        &PipelineConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(report.summary.frames, 25);
    assert!(report.summary.events >= 1);
    // the first triple with change on both sides is centred on frame 7
    assert!(
        report.events.iter().all(|e| (7..=24).contains(&e.frame)),
        "{:?}",
        report.events
    );
    assert_eq!(
        report.summary.classifier_invocations,
        report.summary.gate_passes
    );
}
