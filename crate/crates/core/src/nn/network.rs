use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, KERNEL};
use super::rng::rng_from_seed;
use super::{NnError, Tensor};

/// One layer of a sequential network. Convolutions are 3x3, stride 1,
/// zero "same" padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
    Relu,
    #[serde(rename = "maxpool2x2")]
    MaxPool2x2,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

impl LayerSpec {
    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad =
            |why: &str| NnError::InvalidArchitecture(format!("{self:?} on input {input:?}: {why}"));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => match input {
                [c, h, w] if *c == in_channels && *h > 0 && *w > 0 && out_channels > 0 => {
                    Ok(vec![out_channels, *h, *w])
                }
                _ => Err(bad("expected matching C x H x W")),
            },
            LayerSpec::MaxPool2x2 => match input {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 && *h > 0 && *w > 0 => {
                    Ok(vec![*c, h / 2, w / 2])
                }
                _ => Err(bad("expected C x H x W with even H, W")),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => match input {
                [n] if *n == in_features && out_features > 0 => Ok(vec![out_features]),
                _ => Err(bad("expected flat vector of in_features")),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Softmax => match input {
                [_] => Ok(input.to_vec()),
                _ => Err(bad("expected flat vector")),
            },
        }
    }

    /// Shapes of (weight, bias), empty for parameter-free layers.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => vec![
                vec![out_channels, in_channels, KERNEL, KERNEL],
                vec![out_channels],
            ],
            LayerSpec::Dense {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
            _ => Vec::new(),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { in_channels, .. } => in_channels * KERNEL * KERNEL,
            LayerSpec::Dense { in_features, .. } => in_features,
            _ => 0,
        }
    }
}

/// Parameters plus gradient and momentum buffers of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Tensor>,
    pub grads: Vec<Tensor>,
    pub momentum: Vec<Tensor>,
    pub trainable: bool,
}

impl Layer {
    fn new(spec: LayerSpec, params: Vec<Tensor>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            grads: zeros(),
            momentum: zeros(),
            spec,
            params,
            trainable: true,
        }
    }

    pub fn has_params(&self) -> bool {
        !self.params.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub seed: u64,
    pub epochs_trained: u64,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    pub meta: NetworkMeta,
}

enum Cache {
    Conv {
        in_shape: Vec<usize>,
        cols: Vec<f64>,
    },
    Relu {
        input: Tensor,
    },
    Pool {
        in_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Dense {
        input: Tensor,
    },
    Softmax,
}

/// He-normal weights (variance 2 / fan-in), zero biases.
pub fn he_init(spec: &LayerSpec, seed: u64) -> Vec<Tensor> {
    let shapes = spec.param_shapes();
    if shapes.is_empty() {
        return Vec::new();
    }
    let mut rng = rng_from_seed(seed);
    let std = (2.0 / spec.fan_in() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let w_shape = &shapes[0];
    let n: usize = w_shape.iter().product();
    let w = Tensor::new(
        w_shape.clone(),
        (0..n).map(|_| normal.sample(&mut rng)).collect(),
    )
    .expect("shape product");
    vec![w, Tensor::zeros(&shapes[1])]
}

/// Seed for layer `index` of a network seeded with `seed`; keeps each
/// layer's initialisation independent of the others.
pub(crate) fn layer_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Network {
    /// Builds and He-initialises a network; validates layer compatibility.
    pub fn build(input_shape: &[usize], specs: Vec<LayerSpec>, seed: u64) -> Result<Self, NnError> {
        let params = specs
            .iter()
            .enumerate()
            .map(|(i, s)| he_init(s, layer_seed(seed, i)))
            .collect();
        let mut net = Self::from_params(input_shape, specs, params)?;
        net.meta.seed = seed;
        Ok(net)
    }

    pub fn from_params(
        input_shape: &[usize],
        specs: Vec<LayerSpec>,
        params: Vec<Vec<Tensor>>,
    ) -> Result<Self, NnError> {
        if specs.is_empty() {
            return Err(NnError::InvalidArchitecture("no layers".into()));
        }
        if specs.len() != params.len() {
            return Err(NnError::InvalidArchitecture(format!(
                "{} layer specs but {} parameter groups",
                specs.len(),
                params.len()
            )));
        }
        let mut shape = input_shape.to_vec();
        for (spec, p) in specs.iter().zip(&params) {
            shape = spec.output_shape(&shape)?;
            let expected = spec.param_shapes();
            let got: Vec<Vec<usize>> = p.iter().map(|t| t.shape().to_vec()).collect();
            if expected != got {
                return Err(NnError::InvalidArchitecture(format!(
                    "{spec:?} expects parameter shapes {expected:?}, got {got:?}"
                )));
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers: specs
                .into_iter()
                .zip(params)
                .map(|(s, p)| Layer::new(s, p))
                .collect(),
            meta: NetworkMeta::default(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Per-sample output shape after each layer.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.spec.output_shape(&shape).expect("validated at build");
                shape.clone()
            })
            .collect()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layer_shapes().pop().unwrap_or_default()
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .map(Tensor::len)
            .sum()
    }

    /// Indices of layers that carry parameters.
    pub fn param_layer_indices(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].has_params())
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for g in self.layers.iter_mut().flat_map(|l| l.grads.iter_mut()) {
            g.fill(0.0);
        }
    }

    fn check_batch(&self, x: &Tensor) -> Result<usize, NnError> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![x.shape().first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::ShapeMismatch {
                op: "network input",
                expected,
                got: x.shape().to_vec(),
            });
        }
        if x.shape()[0] == 0 {
            return Err(NnError::EmptyBatch);
        }
        Ok(x.shape()[0])
    }

    fn apply(layer: &Layer, x: Tensor, cache: Option<&mut Vec<Cache>>) -> Result<Tensor, NnError> {
        let n = x.shape()[0];
        let keep = cache.is_some();
        let (out, c) = match &layer.spec {
            LayerSpec::Conv2d { .. } => {
                let (y, cols) =
                    layers::conv2d_forward_batch(&x, &layer.params[0], &layer.params[1], keep)?;
                let c = cols.map(|cols| Cache::Conv {
                    in_shape: x.shape().to_vec(),
                    cols,
                });
                (y, c)
            }
            LayerSpec::Relu => {
                let y = layers::relu_forward(&x);
                (y, keep.then(|| Cache::Relu { input: x }))
            }
            LayerSpec::MaxPool2x2 => {
                let (y, argmax) = layers::maxpool2x2_forward(&x)?;
                let c = keep.then(|| Cache::Pool {
                    in_shape: x.shape().to_vec(),
                    argmax,
                });
                (y, c)
            }
            LayerSpec::Flatten => {
                let in_shape = x.shape().to_vec();
                let inner = x.len() / n;
                (
                    x.reshape(&[n, inner])?,
                    keep.then_some(Cache::Flatten { in_shape }),
                )
            }
            LayerSpec::Dense { .. } => {
                let y = layers::dense_forward_batch(&x, &layer.params[0], &layer.params[1])?;
                (y, keep.then(|| Cache::Dense { input: x }))
            }
            LayerSpec::Softmax => (layers::softmax_batch(&x)?, keep.then_some(Cache::Softmax)),
        };
        if let (Some(cache), Some(c)) = (cache, c) {
            cache.push(c);
        }
        Ok(out)
    }

    /// Batched inference: `N x input_shape` -> `N x output`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_batch(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            a = Self::apply(layer, a, None)?;
        }
        a.ensure_finite("network output")?;
        Ok(a)
    }

    /// Single-sample inference.
    pub fn forward_one(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let y = self.forward(&x.batched())?;
        let shape = y.shape()[1..].to_vec();
        y.reshape(&shape)
    }

    /// Every intermediate batched activation, input excluded.
    pub fn forward_trace(&self, x: &Tensor) -> Result<Vec<Tensor>, NnError> {
        self.check_batch(x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            a = Self::apply(layer, a, None)?;
            out.push(a.clone());
        }
        Ok(out)
    }

    /// Index of the earliest trainable parameterised layer.
    fn first_trainable(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.trainable && l.has_params())
    }

    /// Forward + backward on a batch with mean softmax cross-entropy.
    /// Gradients are *added* to the grad buffers of trainable layers.
    /// Returns the probabilities and the mean loss.
    pub fn accumulate_gradients(
        &mut self,
        x: &Tensor,
        labels: &[usize],
    ) -> Result<(Tensor, f64), NnError> {
        let n = self.check_batch(x)?;
        if labels.len() != n {
            return Err(NnError::ShapeMismatch {
                op: "labels",
                expected: vec![n],
                got: vec![labels.len()],
            });
        }
        if !matches!(
            self.layers.last().map(|l| &l.spec),
            Some(LayerSpec::Softmax)
        ) {
            return Err(NnError::InvalidArchitecture(
                "training requires a softmax head".into(),
            ));
        }
        let k = self.num_classes();
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(NnError::LabelOutOfRange { label, classes: k });
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            a = Self::apply(layer, a, Some(&mut caches))?;
        }
        let probs = a;
        let mut loss = 0.0;
        let mut grad = probs.clone();
        {
            let g = grad.data_mut();
            for (i, &label) in labels.iter().enumerate() {
                loss -= probs.data()[i * k + label].ln();
                g[i * k + label] -= 1.0;
            }
            let scale = 1.0 / n as f64;
            g.iter_mut().for_each(|v| *v *= scale);
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(NnError::NonFinite { op: "loss" });
        }

        let Some(stop) = self.first_trainable() else {
            return Ok((probs, loss));
        };
        // softmax is fused into the loss gradient above
        let last = self.layers.len() - 1;
        caches.pop();
        for i in (stop..last).rev() {
            let cache = caches.pop().expect("one cache per layer");
            let want_input = i > stop;
            let Layer {
                params,
                grads,
                trainable,
                ..
            } = &mut self.layers[i];
            let mut scratch = Vec::new();
            grad = match cache {
                Cache::Conv { in_shape, cols } => {
                    let (gw, gb) = grad_targets(grads, *trainable, &mut scratch);
                    let gi = layers::conv2d_backward_batch(
                        &in_shape, &params[0], &cols, &grad, gw, gb, want_input,
                    )?;
                    match gi {
                        Some(g) => g,
                        None => break,
                    }
                }
                Cache::Dense { input } => {
                    let (gw, gb) = grad_targets(grads, *trainable, &mut scratch);
                    let gi = layers::dense_backward_batch(
                        &input, &params[0], &grad, gw, gb, want_input,
                    )?;
                    match gi {
                        Some(g) => g,
                        None => break,
                    }
                }
                Cache::Relu { input } => layers::relu_backward(&input, &grad)?,
                Cache::Pool { in_shape, argmax } => {
                    layers::maxpool2x2_backward(&in_shape, &argmax, &grad)?
                }
                Cache::Flatten { in_shape } => grad.reshape(&in_shape)?,
                Cache::Softmax => {
                    return Err(NnError::InvalidArchitecture(
                        "softmax only allowed as the last layer".into(),
                    ))
                }
            };
        }
        Ok((probs, loss))
    }
}

/// Gradient buffers to accumulate into: the layer's own when trainable,
/// throwaway scratch otherwise.
fn grad_targets<'a>(
    grads: &'a mut [Tensor],
    trainable: bool,
    scratch: &'a mut Vec<Tensor>,
) -> (&'a mut [f64], &'a mut [f64]) {
    let target = if trainable {
        grads
    } else {
        *scratch = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        scratch.as_mut_slice()
    };
    let (w, b) = target.split_at_mut(1);
    (w[0].data_mut(), b[0].data_mut())
}
