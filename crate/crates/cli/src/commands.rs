use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use handgun_core::datagen::{
    gen_motion_sequence, gen_shapes_dataset, load_labeled_dir, read_gray, DatasetSpec,
    LabeledSample, MotionSpec, Task, DEFAULT_POSITIVE,
};
use handgun_core::metrics::{
    read_pairs_csv, render_table, rows_to_json, ConfusionMatrix, MetricRow,
};
use handgun_core::models::{build_paper_cnn_at, load_checkpoint, save_checkpoint};
use handgun_core::nn::Network;
use handgun_core::pipeline::{
    positive_class, run_stream, sliding_window_detect, DetectMode, DetectionEvent,
};
use handgun_core::transfer::{
    predict_labels, replace_head, samples_from_labeled, set_trainable, split_train_val, train,
    Sample, TrainReport,
};
use handgun_core::ExecMode;

use crate::config::{require, sidecar, usage, RunConfig};
use crate::{
    Command, Common, DataKind, DetectArgs, EvalArgs, GenDataArgs, Mode, TrainArgs, TransferArgs,
};

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    set(&mut cfg.seed, common.seed);
    Ok(cfg)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, args } => gen_data(&common, args),
        Command::Pretrain { common, args } => {
            let cfg = train_overrides(base_config(&common)?, &args);
            fit(cfg, Fit::Pretrain)
        }
        Command::Train { common, args } => {
            let cfg = train_overrides(base_config(&common)?, &args);
            fit(cfg, Fit::Scratch)
        }
        Command::Transfer { common, args } => transfer(&common, args),
        Command::Eval { common, args } => eval(&common, args),
        Command::Detect { common, args } => detect(&common, args),
    }
}

fn gen_data(common: &Common, a: GenDataArgs) -> Result<()> {
    let mut cfg = base_config(common)?;
    set_path(&mut cfg.paths.out, &a.out);
    let d = &mut cfg.data;
    set(&mut d.classes, a.classes);
    set(&mut d.per_class, a.per_class);
    set(&mut d.size, a.size);
    set(&mut d.noise_std, a.noise);
    let m = &mut cfg.motion;
    set(&mut m.frames, a.frames);
    set(&mut m.width, a.width);
    set(&mut m.height, a.height);
    set(&mut m.object_size, a.object_size);
    if let Some(v) = a.velocity {
        m.velocity = v;
    }
    if let Some(s) = a.start {
        m.start = s;
    }
    if a.kind == DataKind::Motion {
        // the frame noise defaults independently of the shape noise
        set(&mut m.noise_std, a.noise);
    }
    let out = require(&cfg.paths.out, "--out")?;

    match a.kind {
        DataKind::Shapes | DataKind::Binary => {
            let mut spec = DatasetSpec {
                num_classes: cfg.data.classes,
                samples_per_class: cfg.data.per_class,
                size: cfg.data.size,
                noise_std: cfg.data.noise_std,
                seed: cfg.seed,
                task: Task::MultiClass,
            };
            if a.kind == DataKind::Binary {
                spec.num_classes = 2;
                spec.task = Task::Binary {
                    positive: DEFAULT_POSITIVE,
                };
            }
            spec.validate().map_err(|e| usage(e.to_string()))?;
            let manifest = gen_shapes_dataset(&spec, &out)?;
            cfg.echo(&out.join("run.json"))?;
            println!("{}", manifest.path.display());
            eprintln!(
                "{} images in {} classes",
                manifest.rows.len(),
                spec.num_classes
            );
        }
        DataKind::Motion => {
            let m = &cfg.motion;
            let spec = MotionSpec {
                width: m.width,
                height: m.height,
                n_frames: m.frames,
                size: m.object_size,
                velocity: (m.velocity[0], m.velocity[1]),
                start: (m.start[0], m.start[1]),
                noise_std: m.noise_std,
                seed: cfg.seed,
            };
            let manifest = gen_motion_sequence(&spec, &out)?;
            cfg.echo(&out.join("run.json"))?;
            println!("{}", manifest.truth_path.display());
            eprintln!("{} frames", manifest.frame_paths.len());
        }
    }
    Ok(())
}

fn train_overrides(mut cfg: RunConfig, a: &TrainArgs) -> RunConfig {
    set_path(&mut cfg.paths.data, &a.data);
    set_path(&mut cfg.paths.out, &a.out);
    set_path(&mut cfg.paths.log, &a.log);
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.lr, a.lr);
    set(&mut t.momentum, a.momentum);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.val_fraction, a.val_fraction);
    if a.stop_at.is_some() {
        t.stop_at = a.stop_at;
    }
    if a.no_shuffle {
        t.shuffle = false;
    }
    cfg
}

struct Dataset {
    samples: Vec<Sample>,
    labels: Vec<String>,
    size: usize,
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let raw: Vec<LabeledSample> =
        load_labeled_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let (w, h) = raw[0].image.dims();
    if w != h {
        bail!("{}: images must be square, found {w}x{h}", dir.display());
    }
    let mut labels: Vec<String> = Vec::new();
    for s in &raw {
        if labels.len() == s.class_index {
            labels.push(s.class_name.clone());
        }
    }
    Ok(Dataset {
        samples: samples_from_labeled(&raw),
        labels,
        size: w,
    })
}

enum Fit {
    Pretrain,
    Scratch,
    Transfer { backbone: PathBuf, freeze: usize },
}

fn fit(cfg: RunConfig, kind: Fit) -> Result<()> {
    let train_cfg = cfg.train_config()?;
    let data_dir = require(&cfg.paths.data, "--data")?;
    let out = require(&cfg.paths.out, "--out")?;
    let data = load_dataset(&data_dir)?;
    let classes = data.labels.len();

    let mut net = match &kind {
        Fit::Pretrain | Fit::Scratch => build_paper_cnn_at(classes, 1, data.size, cfg.seed)?,
        Fit::Transfer { backbone, freeze } => {
            if classes != 2 {
                bail!(
                    "transfer needs a two-class dataset, {} has {classes}",
                    data_dir.display()
                );
            }
            let donor = load_checkpoint(backbone)
                .with_context(|| format!("loading {}", backbone.display()))?;
            if donor.input_shape() != [1, data.size, data.size] {
                bail!(
                    "backbone expects input {:?} but images are {}x{}",
                    donor.input_shape(),
                    data.size,
                    data.size
                );
            }
            let mut net = replace_head(&donor, 2, cfg.seed)?;
            set_trainable(&mut net, *freeze).map_err(|e| usage(e.to_string()))?;
            net
        }
    };
    net.meta.labels = data.labels.clone();

    let (train_set, val_set) = if cfg.train.val_fraction > 0.0 {
        let (t, v) = split_train_val(&data.samples, cfg.train.val_fraction, cfg.seed);
        (t, (!v.is_empty()).then_some(v))
    } else {
        (data.samples, None)
    };
    let report = train(&mut net, &train_set, val_set.as_deref(), &train_cfg)?;

    save_checkpoint(&net, &out).with_context(|| format!("writing {}", out.display()))?;
    let log = cfg
        .paths
        .log
        .clone()
        .unwrap_or_else(|| sidecar(&out, ".log.jsonl"));
    std::fs::write(&log, report.to_jsonl())
        .with_context(|| format!("writing {}", log.display()))?;
    cfg.echo(&sidecar(&out, ".run.json"))?;
    print_fit_summary(&out, &net, &report);
    Ok(())
}

fn print_fit_summary(out: &Path, net: &Network, report: &TrainReport) {
    if let Some(last) = report.epochs.last() {
        let val = last
            .val_acc
            .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "epochs {} loss {:.4} train_acc {:.4} val_acc {val}",
            last.epoch, last.loss, last.train_acc
        );
    }
    println!(
        "checkpoint {} ({} classes)",
        out.display(),
        net.num_classes()
    );
}

fn transfer(common: &Common, a: TransferArgs) -> Result<()> {
    let mut cfg = train_overrides(base_config(common)?, &a.train);
    set_path(&mut cfg.paths.backbone, &a.backbone);
    set(&mut cfg.train.freeze, a.freeze);
    let backbone = require(&cfg.paths.backbone, "--backbone")?;
    let freeze = cfg.train.freeze;
    fit(cfg, Fit::Transfer { backbone, freeze })
}

fn eval(common: &Common, a: EvalArgs) -> Result<()> {
    let mut cfg = base_config(common)?;
    set_path(&mut cfg.paths.checkpoint, &a.checkpoint);
    set_path(&mut cfg.paths.data, &a.data);
    set_path(&mut cfg.paths.out, &a.out);

    let (name, counts) = if let (Some(tp), Some(fn_), Some(tn), Some(fp)) =
        (a.tp, a.fn_, a.tn, a.fp)
    {
        ("counts".to_string(), ConfusionMatrix::new(tp, fn_, tn, fp))
    } else if let Some(pairs) = &a.pairs {
        let (pred, label) = read_pairs_csv(pairs)?;
        let cm = ConfusionMatrix::from_pairs(&pred, &label, 1)?;
        (pairs.display().to_string(), cm)
    } else {
        let ckpt = require(&cfg.paths.checkpoint, "--checkpoint")?;
        let data_dir = require(&cfg.paths.data, "--data")?;
        let net = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
        let data = load_dataset(&data_dir)?;
        let (positive, _) = positive_class(&net)?;
        let preds = predict_labels(&net, &data.samples, ExecMode::default())?;
        let labels: Vec<usize> = data.samples.iter().map(|s| s.label).collect();
        let cm = ConfusionMatrix::from_pairs(&preds, &labels, positive)?;
        let stem = ckpt
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        (stem, cm)
    };
    let row = MetricRow::new(a.name.unwrap_or(name), counts);
    print!("{}", render_table(std::slice::from_ref(&row)));
    if let Some(out) = &cfg.paths.out {
        std::fs::write(out, rows_to_json(std::slice::from_ref(&row)) + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
        cfg.echo(&sidecar(out, ".run.json"))?;
    }
    Ok(())
}

fn detect(common: &Common, a: DetectArgs) -> Result<()> {
    let mut cfg = base_config(common)?;
    set_path(&mut cfg.paths.checkpoint, &a.checkpoint);
    set_path(&mut cfg.paths.frames, &a.frames);
    set_path(&mut cfg.paths.image, &a.image);
    set_path(&mut cfg.paths.log, &a.log);
    let p = &mut cfg.pipeline;
    if let Some(mode) = a.mode {
        p.mode = match mode {
            Mode::Proposals => DetectMode::RegionProposals,
            Mode::Sliding => DetectMode::SlidingWindow,
        };
    }
    set(&mut p.theta, a.theta);
    set(&mut p.motion_threshold, a.threshold);
    set(&mut p.blur_radius, a.blur);
    set(&mut p.min_area, a.min_area);
    set(&mut p.stride, a.stride);
    set(&mut p.scales, a.scales);
    let pipeline = cfg.pipeline_config()?;
    let ckpt = require(&cfg.paths.checkpoint, "--checkpoint")?;
    let net = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;

    let mut sink: Box<dyn Write> = match &cfg.paths.log {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    match pipeline.mode {
        DetectMode::RegionProposals => {
            let frames = require(&cfg.paths.frames, "--frames")?;
            let report = run_stream(&frames, &net, &pipeline, Some(&mut *sink))?;
            sink.flush()?;
            drop(sink);
            println!("{}", serde_json::to_string(&report.summary)?);
        }
        DetectMode::SlidingWindow => {
            let image_path = require(&cfg.paths.image, "--image")?;
            let image = read_gray(&image_path)?;
            let events: Vec<DetectionEvent> =
                sliding_window_detect(&image, &net, &pipeline, ExecMode::default())?;
            for e in &events {
                serde_json::to_writer(&mut *sink, e)?;
                sink.write_all(b"\n")?;
            }
            sink.flush()?;
            drop(sink);
            println!("{}", serde_json::json!({ "events": events.len() }));
        }
    }
    if let Some(log) = &cfg.paths.log {
        cfg.echo(&sidecar(log, ".run.json"))?;
    }
    Ok(())
}
