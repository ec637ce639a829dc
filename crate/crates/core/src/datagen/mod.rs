//! Synthetic datasets, motion sequences and labeled-folder ingestion.

mod motion;
mod shapes;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, ExecMode};
use crate::imgproc::{decode_pnm, encode_pgm, GrayImage, ImageError};
use crate::nn::rng_for_stream;

pub use motion::{
    frame_file_name, gen_motion_sequence, render_motion_sequence, MotionManifest, MotionSequence,
    MotionSpec,
};
pub use shapes::{render_shape, Family, Pose, BACKGROUND, FOREGROUND};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("{path}: image is {got:?}, expected {expected:?} like the files before it")]
    SizeMismatch {
        path: PathBuf,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{0}: no images found")]
    Empty(PathBuf),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("square leaves the frame at frame {frame} (top-left {x},{y})")]
    TrajectoryEscapes { frame: usize, x: i64, y: i64 },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        DataError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// What the generated classes mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    /// One shape family per class.
    #[default]
    MultiClass,
    /// Class 1 ("handgun") is the family with this index; class 0
    /// ("background") cycles through every other family.
    Binary { positive: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    /// Standard deviation of additive pixel noise, as a fraction of 0..255.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub task: Task,
}

fn default_size() -> usize {
    32
}

fn default_noise() -> f64 {
    8.0 / 255.0
}

/// Family index of the positive class in binary tasks: the L-shape.
pub const DEFAULT_POSITIVE: usize = 2;

impl DatasetSpec {
    pub fn new(num_classes: usize, samples_per_class: usize, seed: u64) -> Self {
        Self {
            num_classes,
            samples_per_class,
            size: default_size(),
            noise_std: default_noise(),
            seed,
            task: Task::MultiClass,
        }
    }

    /// Two-class "background" vs "handgun" spec.
    pub fn binary(samples_per_class: usize, seed: u64) -> Self {
        Self {
            task: Task::Binary {
                positive: DEFAULT_POSITIVE,
            },
            ..Self::new(2, samples_per_class, seed)
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(DataError::InvalidSpec("num_classes must be >= 2".into()));
        }
        if self.samples_per_class == 0 {
            return Err(DataError::InvalidSpec(
                "samples_per_class must be >= 1".into(),
            ));
        }
        if self.size < 4 {
            return Err(DataError::InvalidSpec("size must be >= 4".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(DataError::InvalidSpec(
                "noise_std must be finite and >= 0".into(),
            ));
        }
        if let Task::Binary { positive } = self.task {
            if self.num_classes != 2 {
                return Err(DataError::InvalidSpec(
                    "binary task needs exactly 2 classes".into(),
                ));
            }
            if positive >= Family::ALL.len() {
                return Err(DataError::InvalidSpec(format!(
                    "no shape family {positive}"
                )));
            }
        }
        Ok(())
    }

    /// Folder names, which sort into class-index order.
    pub fn class_names(&self) -> Vec<String> {
        match self.task {
            Task::Binary { .. } => vec!["background".into(), "handgun".into()],
            Task::MultiClass => {
                let width = (self.num_classes - 1).to_string().len().max(2);
                (0..self.num_classes)
                    .map(|c| {
                        let variant = c / Family::ALL.len();
                        let base = format!("{c:0width$}_{}", Family::from_index(c).name());
                        if variant == 0 {
                            base
                        } else {
                            format!("{base}_v{variant}")
                        }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: GrayImage,
    pub class_index: usize,
    pub class_name: String,
}

/// Renders every sample of `spec` in memory, class-major order.
pub fn generate_shapes(spec: &DatasetSpec) -> Result<Vec<LabeledSample>, DataError> {
    spec.validate()?;
    let names = spec.class_names();
    let classes: Vec<usize> = (0..spec.num_classes).collect();
    let per_class = exec::map(ExecMode::default(), &classes, |&c| {
        let mut rng = rng_for_stream(spec.seed, c as u64);
        (0..spec.samples_per_class)
            .map(|i| {
                let (family, stretch) = match spec.task {
                    Task::MultiClass => {
                        (Family::from_index(c), 1.0 / (1.0 + 0.3 * (c / 10) as f64))
                    }
                    Task::Binary { positive } if c == 1 => (Family::from_index(positive), 1.0),
                    Task::Binary { positive } => {
                        let others: Vec<Family> = (0..Family::ALL.len())
                            .filter(|&f| f != positive)
                            .map(Family::from_index)
                            .collect();
                        (others[i % others.len()], 1.0)
                    }
                };
                let pose = Pose::random(&mut rng, stretch);
                LabeledSample {
                    image: render_shape(family, pose, spec.size, spec.noise_std, &mut rng),
                    class_index: c,
                    class_name: names[c].clone(),
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(per_class.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    /// Relative to the dataset root.
    pub path: String,
    pub class_index: usize,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub rows: Vec<ManifestRow>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes `out_dir/<class>/NNNN.pgm` plus `out_dir/manifest.csv`.
pub fn gen_shapes_dataset(
    spec: &DatasetSpec,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest, DataError> {
    let samples = generate_shapes(spec)?;
    let root = out_dir.as_ref();
    let mut rows = Vec::with_capacity(samples.len());
    for class in spec.class_names() {
        let dir = root.join(&class);
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    }
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("{}/{:04}.pgm", s.class_name, i % spec.samples_per_class);
        let path = root.join(&rel);
        fs::write(&path, encode_pgm(&s.image)).map_err(|e| DataError::io(&path, e))?;
        rows.push(ManifestRow {
            path: rel,
            class_index: s.class_index,
            class_name: s.class_name.clone(),
        });
    }
    let path = root.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| DataError::csv(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| DataError::csv(&path, e))?;
    }
    w.flush().map_err(|e| DataError::io(&path, e))?;
    Ok(Manifest { path, rows })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        out.push(entry.map_err(|e| DataError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// Reads and decodes one PGM/PPM file into grayscale.
pub fn read_gray(path: &Path) -> Result<GrayImage, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_pnm(&bytes)
        .map(|p| p.into_gray())
        .map_err(|source| DataError::Decode {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads `dir/<class>/*.pgm`. Class indices follow the lexicographic order
/// of folder names; samples follow class, then file name.
pub fn load_labeled_dir(dir: impl AsRef<Path>) -> Result<Vec<LabeledSample>, DataError> {
    let dir = dir.as_ref();
    let classes: Vec<PathBuf> = sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    let mut samples = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (class_index, class_dir) in classes.iter().enumerate() {
        let class_name = class_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let files: Vec<PathBuf> = sorted_entries(class_dir)?
            .into_iter()
            .filter(|p| is_image(p))
            .collect();
        if files.is_empty() {
            return Err(DataError::Empty(class_dir.clone()));
        }
        for path in files {
            let image = read_gray(&path)?;
            match dims {
                Some(expected) if expected != image.dims() => {
                    return Err(DataError::SizeMismatch {
                        path,
                        expected,
                        got: image.dims(),
                    })
                }
                _ => dims = Some(image.dims()),
            }
            samples.push(LabeledSample {
                image,
                class_index,
                class_name: class_name.clone(),
            });
        }
    }
    if samples.is_empty() {
        return Err(DataError::Empty(dir.to_path_buf()));
    }
    Ok(samples)
}

/// Reads `manifest.csv` rows.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>, DataError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| DataError::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| DataError::csv(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq_dist(a: &GrayImage, b: &GrayImage) -> u64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&p, &q)| (i64::from(p) - i64::from(q)).pow(2) as u64)
            .sum()
    }

    #[test]
    fn count_law() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_shapes_dataset(&DatasetSpec::new(2, 10, 0), dir.path()).unwrap();
        assert_eq!(m.rows.len(), 20);
        assert_eq!(read_manifest(&m.path).unwrap(), m.rows);
        let subdirs: Vec<_> = sorted_entries(dir.path())
            .unwrap()
            .into_iter()
            .filter(|p| p.is_dir())
            .collect();
        assert_eq!(subdirs.len(), 2);
        let files: usize = subdirs
            .iter()
            .map(|d| fs::read_dir(d).unwrap().count())
            .sum();
        assert_eq!(files, 20);
        let header = fs::read_to_string(&m.path).unwrap();
        assert!(header.starts_with("path,class_index,class_name\n00_bar/0000.pgm,0,00_bar\n"));
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = DatasetSpec::new(3, 4, 9);
        let ma = gen_shapes_dataset(&spec, a.path()).unwrap();
        gen_shapes_dataset(&spec, b.path()).unwrap();
        for row in &ma.rows {
            assert_eq!(
                fs::read(a.path().join(&row.path)).unwrap(),
                fs::read(b.path().join(&row.path)).unwrap()
            );
        }
        assert_eq!(
            fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(b.path().join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn loads_back_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::new(2, 3, 1);
        gen_shapes_dataset(&spec, dir.path()).unwrap();
        let loaded = load_labeled_dir(dir.path()).unwrap();
        let generated = generate_shapes(&spec).unwrap();
        assert_eq!(loaded, generated);
        let labels: Vec<usize> = loaded.iter().map(|s| s.class_index).collect();
        assert_eq!(labels, [0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn empty_and_inconsistent_dirs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_labeled_dir(dir.path()),
            Err(DataError::Empty(_))
        ));
        let a = dir.path().join("a");
        fs::create_dir(&a).unwrap();
        fs::write(
            a.join("1.pgm"),
            encode_pgm(&GrayImage::filled(32, 32, 0).unwrap()),
        )
        .unwrap();
        fs::write(
            a.join("2.pgm"),
            encode_pgm(&GrayImage::filled(16, 16, 0).unwrap()),
        )
        .unwrap();
        match load_labeled_dir(dir.path()) {
            Err(DataError::SizeMismatch { path, .. }) => assert!(path.ends_with("a/2.pgm")),
            other => panic!("{other:?}"),
        }
        fs::write(a.join("2.pgm"), b"P5\n").unwrap();
        let err = load_labeled_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("2.pgm"));
    }

    #[test]
    fn spec_validation() {
        assert!(DatasetSpec::new(1, 5, 0).validate().is_err());
        assert!(DatasetSpec::new(2, 0, 0).validate().is_err());
        let mut s = DatasetSpec::binary(4, 0);
        s.num_classes = 3;
        assert!(s.validate().is_err());
    }

    #[test]
    fn class_names_sort_in_index_order() {
        let names = DatasetSpec::new(23, 1, 0).class_names();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(names[12], "12_lshape_v1");
        assert_eq!(
            DatasetSpec::binary(1, 0).class_names(),
            ["background", "handgun"]
        );
    }

    #[test]
    fn binary_negatives_avoid_positive_family() {
        let spec = DatasetSpec {
            noise_std: 0.0,
            ..DatasetSpec::binary(18, 3)
        };
        let samples = generate_shapes(&spec).unwrap();
        assert_eq!(samples.len(), 36);
        assert!(samples[..18].iter().all(|s| s.class_name == "background"));
        assert!(samples[18..].iter().all(|s| s.class_index == 1));
    }

    /// Nearest neighbour over a grid of noise-free template poses recovers
    /// every class.
    #[test]
    fn template_oracle_recovers_classes() {
        let spec = DatasetSpec {
            noise_std: 0.0,
            ..DatasetSpec::new(10, 8, 11)
        };
        let samples = generate_shapes(&spec).unwrap();
        let mut rng = crate::nn::rng_from_seed(0);
        let mut bank = Vec::new();
        for c in 0..10 {
            for &dx in &[-3.0, -1.5, 0.0, 1.5, 3.0] {
                for &dy in &[-3.0, -1.5, 0.0, 1.5, 3.0] {
                    for &scale in &[0.7, 0.8, 0.9] {
                        for deg in [-15.0f64, -7.5, 0.0, 7.5, 15.0] {
                            let pose = Pose {
                                dx,
                                dy,
                                scale,
                                rotation: deg.to_radians(),
                                stretch: 1.0,
                            };
                            bank.push((
                                c,
                                render_shape(Family::from_index(c), pose, 32, 0.0, &mut rng),
                            ));
                        }
                    }
                }
            }
        }
        for s in &samples {
            let best = bank
                .iter()
                .min_by_key(|(_, t)| sq_dist(t, &s.image))
                .unwrap()
                .0;
            assert_eq!(best, s.class_index, "{}", s.class_name);
        }
    }
}
