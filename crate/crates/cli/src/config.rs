//! The JSON run configuration and its command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use handgun_core::pipeline::PipelineConfig;
use handgun_core::transfer::TrainConfig;
use serde::{Deserialize, Serialize};

/// Bad flags or config; maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Training hyperparameters; the seed lives at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub shuffle: bool,
    pub stop_at: Option<f64>,
    /// Held-out fraction for validation accuracy; 0 trains on everything.
    pub val_fraction: f64,
    /// Parameterised layers kept frozen during transfer.
    pub freeze: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            lr: t.lr,
            momentum: t.momentum,
            batch_size: t.batch_size,
            shuffle: t.shuffle,
            stop_at: t.stop_at,
            val_fraction: 0.2,
            freeze: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    /// Fraction of the 0..255 range.
    pub noise_std: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 50,
            size: 32,
            noise_std: 8.0 / 255.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionSection {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub object_size: usize,
    pub velocity: [i64; 2],
    pub start: [i64; 2],
    pub noise_std: f64,
}

impl Default for MotionSection {
    fn default() -> Self {
        Self {
            frames: 20,
            width: 96,
            height: 64,
            object_size: 12,
            velocity: [2, 0],
            start: [8, 26],
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSection {
    pub data: Option<PathBuf>,
    pub backbone: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Every random choice derives from this; absent means 0.
    pub seed: u64,
    pub train: TrainSection,
    pub data: DataSection,
    pub motion: MotionSection,
    pub pipeline: PipelineConfig,
    pub paths: PathSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            momentum: t.momentum,
            batch_size: t.batch_size,
            seed: self.seed,
            shuffle: t.shuffle,
            stop_at: t.stop_at,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        if !(0.0..1.0).contains(&t.val_fraction) {
            return Err(usage("val_fraction must be in [0, 1)"));
        }
        Ok(cfg)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        self.pipeline.validate().map_err(|e| usage(e.to_string()))?;
        Ok(self.pipeline.clone())
    }

    /// Writes the resolved config as pretty JSON.
    pub fn echo(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `<path>.run.json` next to an output file.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn require(value: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value
        .clone()
        .ok_or_else(|| usage(format!("missing {flag} (flag or config paths)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
        assert_eq!(serde_json::from_str::<RunConfig>("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 1}}"#).is_err());
        assert!(
            serde_json::from_str::<RunConfig>(r#"{"pipeline": {"theta": 0.7, "x": 1}}"#).is_err()
        );
    }

    #[test]
    fn zero_epochs_is_usage_error() {
        let mut cfg = RunConfig::default();
        cfg.train.epochs = 0;
        let err = cfg.train_config().unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn sidecar_appends() {
        assert_eq!(
            sidecar(Path::new("a/b.ckpt"), ".run.json"),
            PathBuf::from("a/b.ckpt.run.json")
        );
    }
}
