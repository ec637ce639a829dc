use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::exec::{self, ExecMode};
use crate::imgproc::GrayImage;
use crate::nn::{Network, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
    pub prob: f64,
}

impl Prediction {
    fn from_probs(probs: Vec<f64>) -> Self {
        let (class, prob) =
            probs
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, p)| {
                    if p > best.1 {
                        (i, p)
                    } else {
                        best
                    }
                });
        Self { class, probs, prob }
    }
}

/// Scales 8-bit pixels into `[0, 1]`, shape `1 x H x W`.
pub fn image_to_tensor(img: &GrayImage) -> Tensor {
    let data = img.data().iter().map(|&v| f64::from(v) / 255.0).collect();
    Tensor::new(vec![1, img.height(), img.width()], data).expect("dims match")
}

pub fn predict(net: &Network, patch: &Tensor) -> Result<Prediction, ModelError> {
    let probs = net.forward_one(patch)?;
    Ok(Prediction::from_probs(probs.into_data()))
}

/// Anything that maps fixed-size patches to class probabilities.
pub trait Classifier: Sync {
    /// Per-sample input shape.
    fn input_shape(&self) -> Vec<usize>;

    fn labels(&self) -> Vec<String>;

    fn predict_batch(
        &self,
        patches: &[Tensor],
        mode: ExecMode,
    ) -> Result<Vec<Prediction>, ModelError>;
}

const CHUNK: usize = 32;

impl Classifier for Network {
    fn input_shape(&self) -> Vec<usize> {
        Network::input_shape(self).to_vec()
    }

    fn labels(&self) -> Vec<String> {
        self.meta.labels.clone()
    }

    fn predict_batch(
        &self,
        patches: &[Tensor],
        mode: ExecMode,
    ) -> Result<Vec<Prediction>, ModelError> {
        let chunks: Vec<&[Tensor]> = patches.chunks(CHUNK).collect();
        let results = exec::map(
            mode,
            &chunks,
            |chunk| -> Result<Vec<Prediction>, ModelError> {
                let refs: Vec<&Tensor> = chunk.iter().collect();
                let probs = self.forward(&Tensor::stack(&refs)?)?;
                let k = probs.shape()[1];
                Ok(probs
                    .data()
                    .chunks(k)
                    .map(|row| Prediction::from_probs(row.to_vec()))
                    .collect())
            },
        );
        let mut out = Vec::with_capacity(patches.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}
