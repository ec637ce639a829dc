//! Checkpoint files.
//!
//! Layout: the 8-byte magic `HGCKPT01`, a little-endian `u64` header length,
//! a UTF-8 JSON header `{"version", "layers", "shapes", "meta"}`, then every
//! parameter tensor as little-endian IEEE-754 `f32`, in layer order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{LayerSpec, Network, NetworkMeta, NnError, Tensor};

pub const MAGIC: &[u8; 8] = b"HGCKPT01";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: need {needed} bytes, have {got}")]
    Truncated { needed: u64, got: u64 },
    #[error("header declares {declared} floats but blob holds {available} bytes")]
    LengthMismatch { declared: usize, available: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("parameter shapes do not fit the layers: {0}")]
    Shape(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs_trained: u64,
    pub num_classes: usize,
    pub labels: Vec<String>,
    pub input_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    meta: CheckpointMeta,
}

pub fn checkpoint_bytes(net: &Network) -> Vec<u8> {
    let header = Header {
        version: VERSION,
        layers: net.specs(),
        shapes: net
            .layers()
            .iter()
            .flat_map(|l| l.params.iter().map(|p| p.shape().to_vec()))
            .collect(),
        meta: CheckpointMeta {
            seed: net.meta.seed,
            epochs_trained: net.meta.epochs_trained,
            num_classes: net.num_classes(),
            labels: net.meta.labels.clone(),
            input_shape: net.input_shape().to_vec(),
        },
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let floats: usize = net.param_count();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.layers().iter().flat_map(|l| &l.params) {
        for &v in p.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Network, CheckpointError> {
    let truncated = |needed: usize| CheckpointError::Truncated {
        needed: needed as u64,
        got: bytes.len() as u64,
    };
    if bytes.len() < MAGIC.len() {
        return Err(truncated(MAGIC.len()));
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(truncated(16));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or(CheckpointError::Truncated {
            needed: 16u64.saturating_add(header_len),
            got: bytes.len() as u64,
        })? as usize;

    let value: serde_json::Value = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    // version is checked before the rest so future layouts fail clearly
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::Header("missing version".into()))? as u32;
    if found != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found,
            expected: VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(value).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let blob = &bytes[header_end..];
    let declared: usize = header
        .shapes
        .iter()
        .map(|s| s.iter().product::<usize>())
        .sum();
    if blob.len() != declared * 4 {
        return Err(CheckpointError::LengthMismatch {
            declared,
            available: blob.len(),
        });
    }
    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    let mut shapes = header.shapes.into_iter();
    let mut params = Vec::with_capacity(header.layers.len());
    for spec in &header.layers {
        let mut group = Vec::new();
        for _ in spec.param_shapes() {
            let shape = shapes.next().ok_or_else(|| {
                CheckpointError::Header("fewer shapes than parameter tensors".into())
            })?;
            let n = shape.iter().product();
            group.push(Tensor::new(shape, floats.by_ref().take(n).collect())?);
        }
        params.push(group);
    }
    if shapes.next().is_some() {
        return Err(CheckpointError::Header(
            "more shapes than parameter tensors".into(),
        ));
    }
    let mut net = Network::from_params(&header.meta.input_shape, header.layers, params)?;
    if net.num_classes() != header.meta.num_classes {
        return Err(CheckpointError::Header(format!(
            "meta.num_classes {} but head has {}",
            header.meta.num_classes,
            net.num_classes()
        )));
    }
    net.meta = NetworkMeta {
        seed: header.meta.seed,
        epochs_trained: header.meta.epochs_trained,
        labels: header.meta.labels,
    };
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint_bytes(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network, CheckpointError> {
    checkpoint_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn small() -> Network {
        let mut net = Network::build(
            &[1, 4, 4],
            vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_features: 32,
                    out_features: 2,
                },
                LayerSpec::Softmax,
            ],
            9,
        )
        .unwrap();
        net.meta.labels = vec!["background".into(), "handgun".into()];
        net.meta.epochs_trained = 3;
        net
    }

    #[test]
    fn round_trip_within_f32() {
        let net = small();
        let back = checkpoint_from_bytes(&checkpoint_bytes(&net)).unwrap();
        assert_eq!(back.specs(), net.specs());
        assert_eq!(back.meta, net.meta);
        for (a, b) in net
            .layers()
            .iter()
            .flat_map(|l| &l.params)
            .zip(back.layers().iter().flat_map(|l| &l.params))
        {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*y, f64::from(*x as f32));
            }
        }
    }

    #[test]
    fn canonical_second_save() {
        let first = checkpoint_bytes(&small());
        let second = checkpoint_bytes(&checkpoint_from_bytes(&first).unwrap());
        let third = checkpoint_bytes(&checkpoint_from_bytes(&second).unwrap());
        assert_eq!(second, third);
    }

    #[test]
    fn header_field_names() {
        let bytes = checkpoint_bytes(&small());
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        for key in ["version", "layers", "shapes", "meta"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["layers"][0]["kind"], "conv2d");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = checkpoint_bytes(&small());
        bytes[0] ^= 0xFF;
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn version_mismatch() {
        let bytes = checkpoint_bytes(&small());
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[16..16 + len].to_vec()).unwrap();
        let patched = header.replacen("\"version\":1", "\"version\":7", 1);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(patched.len() as u64).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[16 + len..]);
        assert!(matches!(
            checkpoint_from_bytes(&out),
            Err(CheckpointError::VersionMismatch {
                found: 7,
                expected: 1
            })
        ));
    }

    #[test]
    fn length_mismatch() {
        // one dense 2x4 + bias 2 = 10 floats declared, only 8 present
        let net = Network::build(
            &[4],
            vec![
                LayerSpec::Dense {
                    in_features: 4,
                    out_features: 2,
                },
                LayerSpec::Softmax,
            ],
            0,
        )
        .unwrap();
        let mut bytes = checkpoint_bytes(&net);
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(CheckpointError::LengthMismatch {
                declared: 10,
                available: 32
            })
        ));
    }

    #[test]
    fn truncated_header() {
        let bytes = checkpoint_bytes(&small());
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..12]),
            Err(CheckpointError::Truncated { .. })
        ));
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..40]),
            Err(CheckpointError::Truncated { .. })
        ));
    }
}
