//! Minibatch training, head replacement, freezing and transfer runs.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::LabeledSample;
use crate::exec::ExecMode;
use crate::models::{build_mini_backbone, image_to_tensor, Classifier, ModelError};
use crate::nn::{
    he_init, layer_seed, rng_for_stream, sgd_step, LayerSpec, Network, NnError, Tensor,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("network has no dense classification head")]
    NoDenseHead,
    #[error("frozen prefix {prefix} exceeds {layers} parameterised layers")]
    PrefixOutOfRange { prefix: usize, layers: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

pub fn samples_from_labeled(samples: &[LabeledSample]) -> Vec<Sample> {
    samples
        .iter()
        .map(|s| Sample {
            input: image_to_tensor(&s.image),
            label: s.class_index,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Stop once the monitored accuracy (validation if given, else train)
    /// reaches this value.
    pub stop_at: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
            shuffle: true,
            stop_at: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if let Some(t) = self.stop_at {
            if !(0.0..=1.0).contains(&t) {
                return bad("stop_at must be in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn train_acc(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_acc).collect()
    }

    pub fn val_acc(&self) -> Vec<Option<f64>> {
        self.epochs.iter().map(|e| e.val_acc).collect()
    }

    /// First (1-based) epoch whose validation accuracy, or train accuracy
    /// when there is no validation set, reaches `threshold`.
    pub fn epochs_to_target(&self, threshold: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.val_acc.unwrap_or(e.train_acc) >= threshold)
            .map(|e| e.epoch)
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }
}

fn stack(samples: &[&Sample]) -> Result<Tensor, NnError> {
    let inputs: Vec<&Tensor> = samples.iter().map(|s| &s.input).collect();
    Tensor::stack(&inputs)
}

/// Predicted class per sample.
pub fn predict_labels(
    net: &Network,
    samples: &[Sample],
    mode: ExecMode,
) -> Result<Vec<usize>, TrainError> {
    let inputs: Vec<Tensor> = samples.iter().map(|s| s.input.clone()).collect();
    Ok(net
        .predict_batch(&inputs, mode)?
        .into_iter()
        .map(|p| p.class)
        .collect())
}

pub fn evaluate(net: &Network, samples: &[Sample], mode: ExecMode) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let preds = predict_labels(net, samples, mode)?;
    let correct = preds
        .iter()
        .zip(samples)
        .filter(|(&p, s)| p == s.label)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Shuffled minibatch SGD with momentum. Deterministic for a fixed config.
pub fn train(
    net: &mut Network,
    train_set: &[Sample],
    val_set: Option<&[Sample]>,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_some_and(<[Sample]>::is_empty) {
        return Err(TrainError::EmptyDataset);
    }
    let mode = ExecMode::default();
    let mut rng = rng_for_stream(cfg.seed, 0x7261_696e);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            net.zero_grads();
            let (_, loss) = net.accumulate_gradients(&stack(&batch)?, &labels)?;
            sgd_step(net, cfg.lr, cfg.momentum);
            loss_sum += loss;
            batches += 1;
        }
        net.meta.epochs_trained += 1;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            train_acc: evaluate(net, train_set, mode)?,
            val_acc: val_set.map(|v| evaluate(net, v, mode)).transpose()?,
        };
        let monitored = record.val_acc.unwrap_or(record.train_acc);
        report.epochs.push(record);
        if cfg.stop_at.is_some_and(|t| monitored >= t) {
            break;
        }
    }
    Ok(report)
}

/// Swaps the final dense layer for a freshly initialised one with
/// `new_num_classes` outputs. Every other parameter is copied bit for bit;
/// all layers come back trainable and with empty momentum.
pub fn replace_head(
    net: &Network,
    new_num_classes: usize,
    seed: u64,
) -> Result<Network, TrainError> {
    if new_num_classes == 0 {
        return Err(TrainError::InvalidConfig(
            "head needs at least one class".into(),
        ));
    }
    let mut specs = net.specs();
    let head = specs
        .iter()
        .rposition(|s| matches!(s, LayerSpec::Dense { .. }))
        .ok_or(TrainError::NoDenseHead)?;
    if specs[head + 1..]
        .iter()
        .any(|s| !matches!(s, LayerSpec::Softmax | LayerSpec::Relu))
    {
        return Err(TrainError::NoDenseHead);
    }
    let LayerSpec::Dense { in_features, .. } = specs[head] else {
        unreachable!()
    };
    specs[head] = LayerSpec::Dense {
        in_features,
        out_features: new_num_classes,
    };
    let params = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i == head {
                he_init(&specs[head], layer_seed(seed, head))
            } else {
                l.params.clone()
            }
        })
        .collect();
    let mut out = Network::from_params(net.input_shape(), specs, params)?;
    out.meta.seed = seed;
    out.meta.epochs_trained = net.meta.epochs_trained;
    Ok(out)
}

/// Marks the first `frozen_prefix` parameterised layers non-trainable and
/// the rest trainable.
pub fn set_trainable(net: &mut Network, frozen_prefix: usize) -> Result<(), TrainError> {
    let indices = net.param_layer_indices();
    if frozen_prefix > indices.len() {
        return Err(TrainError::PrefixOutOfRange {
            prefix: frozen_prefix,
            layers: indices.len(),
        });
    }
    for (k, &i) in indices.iter().enumerate() {
        net.layers_mut()[i].trainable = k >= frozen_prefix;
    }
    Ok(())
}

/// Seeded, class-stratified split; returns `(train, val)`.
pub fn split_train_val(
    samples: &[Sample],
    val_fraction: f64,
    seed: u64,
) -> (Vec<Sample>, Vec<Sample>) {
    let classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut rng = rng_for_stream(seed, 0x7370_6c74);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == c)
            .collect();
        idx.shuffle(&mut rng);
        let n_val = (idx.len() as f64 * val_fraction).round() as usize;
        let (v, t) = idx.split_at(n_val);
        val.extend(v.iter().map(|&i| samples[i].clone()));
        train.extend(t.iter().map(|&i| samples[i].clone()));
    }
    (train, val)
}

pub const VAL_FRACTION: f64 = 0.2;
pub const DEFAULT_TARGET: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub pretrain: TrainReport,
    pub transfer: TrainReport,
    pub scratch: TrainReport,
    pub transfer_epochs: Option<usize>,
    pub scratch_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub target: f64,
    /// Fine-tuning epoch budget; arms that never reach the target count as
    /// `budget + 1`.
    pub budget: usize,
    pub seeds: Vec<SeedOutcome>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl ExperimentReport {
    fn effective(&self, e: Option<usize>) -> usize {
        e.unwrap_or(self.budget + 1)
    }

    pub fn median_transfer(&self) -> f64 {
        median(
            self.seeds
                .iter()
                .map(|s| self.effective(s.transfer_epochs) as f64)
                .collect(),
        )
    }

    pub fn median_scratch(&self) -> f64 {
        median(
            self.seeds
                .iter()
                .map(|s| self.effective(s.scratch_epochs) as f64)
                .collect(),
        )
    }

    /// Seeds where the transfer arm reached the target strictly earlier.
    pub fn strict_improvements(&self) -> usize {
        self.seeds
            .iter()
            .filter(|s| self.effective(s.transfer_epochs) < self.effective(s.scratch_epochs))
            .count()
    }
}

/// For each seed: pretrain a backbone on `pretrain_set`, re-head it to two
/// classes and fine-tune on `binary_set`, then train a network with the
/// same initial weights but no pretraining on the same data in the same
/// order. The target accuracy is `cfg_fine.stop_at` (default 0.95) on a
/// seeded 80/20 split of `binary_set`.
pub fn transfer_experiment(
    pretrain_set: &[Sample],
    binary_set: &[Sample],
    cfg_pre: &TrainConfig,
    cfg_fine: &TrainConfig,
    seeds: &[u64],
) -> Result<ExperimentReport, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::InvalidConfig("no seeds".into()));
    }
    if pretrain_set.is_empty() || binary_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    cfg_pre.validate()?;
    cfg_fine.validate()?;
    let target = cfg_fine.stop_at.unwrap_or(DEFAULT_TARGET);
    let pre_classes = pretrain_set.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (bin_train, bin_val) = split_train_val(binary_set, VAL_FRACTION, seed);
        let head_seed = seed ^ 0x4845_4144;
        let fresh = build_mini_backbone(pre_classes, seed)?;

        let mut scratch = replace_head(&fresh, 2, head_seed)?;
        let mut backbone = fresh;
        let pretrain = train(
            &mut backbone,
            pretrain_set,
            None,
            &TrainConfig {
                seed,
                ..cfg_pre.clone()
            },
        )?;
        let mut transferred = replace_head(&backbone, 2, head_seed)?;

        let fine = TrainConfig {
            seed,
            stop_at: Some(target),
            ..cfg_fine.clone()
        };
        let transfer = train(&mut transferred, &bin_train, Some(&bin_val), &fine)?;
        let scratch_report = train(&mut scratch, &bin_train, Some(&bin_val), &fine)?;
        outcomes.push(SeedOutcome {
            seed,
            transfer_epochs: transfer.epochs_to_target(target),
            scratch_epochs: scratch_report.epochs_to_target(target),
            pretrain,
            transfer,
            scratch: scratch_report,
        });
    }
    Ok(ExperimentReport {
        target,
        budget: cfg_fine.epochs,
        seeds: outcomes,
    })
}
