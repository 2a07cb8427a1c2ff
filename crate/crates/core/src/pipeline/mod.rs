//! Two-phase semi-supervised protocol: layer-local Hebbian pretraining on
//! unlabeled images, then a linear softmax probe fitted on the labeled subset.

pub mod checkpoint;
pub mod probe;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{apply_update, HebbLayer, Stage};
use crate::rules::{batch_metric, compute_update, Rule};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LayerRecord, RngState};
pub use probe::{evaluate, softmax_cross_entropy, train_probe, LinearProbe, ProbeReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerSchedule {
    /// Every Hebbian layer updates during the same forward pass.
    Joint,
    /// Layers are trained one after another, earlier ones frozen.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hebb_lr: f64,
    pub probe_lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub early_stopping: bool,
    pub schedule: LayerSchedule,
    /// Epochs without improvement of the pretraining metric before a layer
    /// counts as converged.
    pub plateau_patience: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub standardize_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            hebb_lr: 1e-3,
            probe_lr: 1e-3,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 5e-2,
            early_stopping: true,
            schedule: LayerSchedule::Joint,
            plateau_patience: 3,
            val_fraction: 0.2,
            test_fraction: 0.2,
            standardize_features: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates_ok = [self.hebb_lr, self.probe_lr]
            .iter()
            .all(|r| *r > 0.0 && r.is_finite());
        if self.epochs == 0 || self.batch_size == 0 || !rates_ok {
            return Err(Error::Config(
                "epochs, batch_size and learning rates must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "momentum must be in [0, 1) and weight_decay ≥ 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(
                "val_fraction and test_fraction must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Step schedule for the supervised stage: the base rate for the first half
/// of training, then halved every two epochs.
pub fn learning_rate_at(base: f64, epoch: usize, epochs: usize) -> f64 {
    let half = epochs / 2;
    if epoch < half {
        base
    } else {
        base * 0.5f64.powi(((epoch - half) / 2 + 1) as i32)
    }
}

/// Unlabeled image source handed to pretraining. It carries no labels, so
/// pretraining cannot read them.
#[derive(Debug, Clone, Copy)]
pub struct Images<'a> {
    sample_shape: [usize; 3],
    pixels: &'a [f64],
}

impl<'a> Images<'a> {
    pub fn new(sample_shape: [usize; 3], pixels: &'a [f64]) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || !pixels.len().is_multiple_of(per) {
            return Err(Error::InvalidShape(
                sample_shape.to_vec(),
                "pixel buffer is not a whole number of samples",
            ));
        }
        Ok(Self {
            sample_shape,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.sample_shape.iter().product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.sample_shape
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let per: usize = self.sample_shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * per..(i + 1) * per]);
        }
        let [c, h, w] = self.sample_shape;
        Tensor::new([indices.len(), c, h, w], data)
    }
}

impl Dataset {
    pub fn unlabeled(&self) -> Images<'_> {
        Images {
            sample_shape: self.sample_shape(),
            pixels: self.pixels(),
        }
    }
}

/// Feature extractor: Hebbian layers interleaved with fixed-function stages.
#[derive(Debug, Clone, Default)]
pub struct Stack {
    pub stages: Vec<Stage>,
}

impl Stack {
    pub fn new(stages: Vec<Stage>) -> Self {
        Self { stages }
    }

    pub fn hebb_layers(&self) -> impl Iterator<Item = &HebbLayer> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Hebb(layer) => Some(layer),
            _ => None,
        })
    }

    pub fn hebb_layers_mut(&mut self) -> impl Iterator<Item = &mut HebbLayer> {
        self.stages.iter_mut().filter_map(|s| match s {
            Stage::Hebb(layer) => Some(layer),
            _ => None,
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut act = input.clone();
        for stage in &self.stages {
            act = stage.forward(&act)?;
        }
        Ok(act)
    }

    /// Shape of the stack output for one sample of the given shape.
    pub fn output_shape(&self, sample_shape: [usize; 3]) -> Result<Vec<usize>> {
        let [c, h, w] = sample_shape;
        let probe = Tensor::zeros([1, c, h, w])?;
        Ok(self.forward(&probe)?.shape()[1..].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// One entry per Hebbian layer, in stack order. `NaN` for layers that
    /// were not trained this epoch (sequential schedule).
    pub layer_metrics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Per Hebbian layer: epochs needed before the metric plateaued.
    pub convergence_epochs: Vec<usize>,
}

/// Index of the best epoch + 1 once `patience` epochs pass without strict
/// improvement; the full length if the metric never plateaus.
pub fn convergence_epoch(series: &[f64], higher_is_better: bool, patience: usize) -> usize {
    let mut best = None::<(usize, f64)>;
    for (e, &v) in series.iter().enumerate() {
        let improved = match best {
            None => true,
            Some((_, b)) => {
                if higher_is_better {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if improved {
            best = Some((e, v));
        } else if let Some((be, _)) = best {
            if e - be >= patience {
                return be + 1;
            }
        }
    }
    series.len()
}

fn shuffled_batches(len: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// One pass over `images`, updating the Hebbian layers whose positions are
/// in `trainable`. Returns the sample-weighted mean metric per Hebbian layer.
fn pretrain_epoch(
    stack: &mut Stack,
    images: &Images<'_>,
    batch_size: usize,
    trainable: &[bool],
    stop_after: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let hebb_count = trainable.len();
    let mut sums = vec![0.0; hebb_count];
    let mut counts = vec![0usize; hebb_count];
    for batch in shuffled_batches(images.len(), batch_size, rng) {
        let mut act = images.batch(&batch)?;
        let mut hebb_index = 0;
        for stage in stack.stages.iter_mut().take(stop_after) {
            act = match stage {
                Stage::Hebb(layer) => {
                    let i = hebb_index;
                    hebb_index += 1;
                    if trainable[i] {
                        let (x, out) = layer.forward_with_rule_input(&act)?;
                        let rows = x.dim(0);
                        sums[i] += batch_metric(layer.weights(), &x, &layer.params)? * rows as f64;
                        counts[i] += rows;
                        let update =
                            compute_update(layer.weights(), &x, &layer.params, layer.update_impl)?;
                        *layer = apply_update(layer.clone(), &update)?;
                        out
                    } else {
                        layer.forward(&act)?
                    }
                }
                other => other.forward(&act)?,
            };
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect())
}

/// Unsupervised Hebbian pretraining over every sample in `images`.
pub fn pretrain(
    stack: Stack,
    images: Images<'_>,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Stack, PretrainReport)> {
    config.validate()?;
    let mut stack = stack;
    let hebb_count = stack.hebb_layers().count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PretrainReport::default();
    if hebb_count == 0 || images.is_empty() {
        report.convergence_epochs = vec![0; hebb_count];
        return Ok((stack, report));
    }
    let hebb_positions: Vec<usize> = stack
        .stages
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, Stage::Hebb(_)))
        .map(|(i, _)| i)
        .collect();

    let phases: Vec<(Vec<bool>, usize)> = match config.schedule {
        LayerSchedule::Joint => vec![(vec![true; hebb_count], stack.stages.len())],
        LayerSchedule::Sequential => (0..hebb_count)
            .map(|k| {
                let mask = (0..hebb_count).map(|i| i == k).collect();
                (mask, hebb_positions[k] + 1)
            })
            .collect(),
    };
    let mut epoch_index = 0;
    for (trainable, stop_after) in &phases {
        for _ in 0..config.epochs {
            let metrics = pretrain_epoch(
                &mut stack,
                &images,
                config.batch_size,
                trainable,
                *stop_after,
                &mut rng,
            )?;
            report.epochs.push(EpochMetrics {
                epoch: epoch_index,
                layer_metrics: metrics,
            });
            epoch_index += 1;
        }
    }
    report.convergence_epochs = stack
        .hebb_layers()
        .enumerate()
        .map(|(i, layer)| {
            let series: Vec<f64> = report
                .epochs
                .iter()
                .map(|e| e.layer_metrics[i])
                .filter(|v| !v.is_nan())
                .collect();
            convergence_epoch(
                &series,
                layer.params.rule == Rule::Swta,
                config.plateau_patience,
            )
        })
        .collect();
    Ok((stack, report))
}

/// Final stack activations, flattened to `B×F`. `None` for an empty source.
pub fn extract_features(
    stack: &Stack,
    images: Images<'_>,
    batch_size: usize,
) -> Result<Option<Tensor>> {
    if images.is_empty() {
        return Ok(None);
    }
    let mut rows = Vec::new();
    let mut width = 0;
    let all: Vec<usize> = (0..images.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let out = stack.forward(&images.batch(chunk)?)?;
        width = out.len() / chunk.len();
        rows.extend(out.into_data());
    }
    Tensor::new([images.len(), width], rows).map(Some)
}
