//! Linear softmax classifier trained on frozen features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{learning_rate_at, TrainConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `K×F`.
    pub weights: Tensor,
    pub bias: Vec<f64>,
    /// Per-feature standardization fitted on the training features.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LinearProbe {
    pub fn zeros(classes: usize, features: usize) -> Result<Self> {
        Ok(Self {
            weights: Tensor::zeros([classes, features])?,
            bias: vec![0.0; classes],
            mean: vec![0.0; features],
            std: vec![1.0; features],
        })
    }

    pub fn classes(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn features(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn standardize(&self, features: &Tensor) -> Result<Tensor> {
        check_width(features, self.features())?;
        let f = self.features();
        let mut data = features.data().to_vec();
        for row in data.chunks_mut(f) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Tensor::new(features.shape().to_vec(), data)
    }

    /// `B×K` class scores for raw (unstandardized) features.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        logits(&self.weights, &self.bias, &self.standardize(features)?)
    }
}

fn check_width(features: &Tensor, width: usize) -> Result<()> {
    if features.rank() != 2 || features.dim(1) != width {
        return Err(Error::shape(
            "probe features",
            &[0, width],
            features.shape(),
        ));
    }
    Ok(())
}

fn logits(weights: &Tensor, bias: &[f64], x: &Tensor) -> Result<Tensor> {
    let wt = weights.transpose(0, 1)?;
    let b = Tensor::new([1, bias.len()], bias.to_vec())?;
    x.matmul(&wt)?.add(&b)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape("probe labels", &[rows], &[labels.len()]));
    }
    if let Some((record, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::BadLabel {
            record,
            label: label.min(u8::MAX as usize) as u8,
        });
    }
    Ok(())
}

/// Mean cross-entropy plus `weight_decay/2 · ‖W‖²` on already standardized
/// features, with its gradient with respect to the weights and the bias.
pub fn softmax_cross_entropy(
    weights: &Tensor,
    bias: &[f64],
    x: &Tensor,
    labels: &[usize],
    weight_decay: f64,
) -> Result<(f64, Tensor, Vec<f64>)> {
    let k = weights.dim(0);
    check_width(x, weights.dim(1))?;
    check_labels(labels, x.dim(0), k)?;
    let rows = x.dim(0) as f64;
    let probs = logits(weights, bias, x)?.softmax(1, 1.0)?;
    let mut residual = probs.into_data();
    let mut loss = 0.0;
    for (row, &y) in residual.chunks_mut(k).zip(labels) {
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
    }
    let residual = Tensor::new([labels.len(), k], residual)?;
    let grad_b = residual.reduce_sum(0)?.scale(1.0 / rows).into_data();
    let grad_w = residual
        .transpose(0, 1)?
        .matmul(x)?
        .scale(1.0 / rows)
        .add(&weights.scale(weight_decay))?;
    let penalty = 0.5 * weight_decay * weights.data().iter().map(|w| w * w).sum::<f64>();
    Ok((loss / rows + penalty, grad_w, grad_b))
}

/// Fraction of rows whose true class ranks within the top `k` scores. Equal
/// scores rank the lower class index first.
pub fn evaluate(probe: &LinearProbe, features: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let classes = probe.classes();
    check_labels(labels, features.dim(0), classes)?;
    if k == 0 {
        return Err(Error::Config("top-k needs k ≥ 1".into()));
    }
    let scores = probe.logits(features)?;
    Ok(topk_accuracy(scores.data(), classes, labels, k))
}

fn topk_accuracy(scores: &[f64], classes: usize, labels: &[usize], k: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = scores
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| {
            let rank = row
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > row[y] || (s == row[y] && j < y))
                .count();
            rank < k
        })
        .count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeReport {
    pub train_loss: Vec<f64>,
    /// Empty when no validation set was given.
    pub val_accuracy: Vec<f64>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

fn feature_stats(x: &Tensor, standardize: bool) -> (Vec<f64>, Vec<f64>) {
    let (b, f) = (x.dim(0), x.dim(1));
    if !standardize {
        return (vec![0.0; f], vec![1.0; f]);
    }
    let mut mean = vec![0.0; f];
    for row in x.data().chunks(f) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut var = vec![0.0; f];
    for row in x.data().chunks(f) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / b as f64).sqrt();
            if sd > STD_FLOOR {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Mini-batch SGD with (Nesterov) momentum, L2 decay and the step schedule.
/// With early stopping and a non-empty validation set, the weights from the
/// epoch with the highest validation accuracy are returned (earliest on ties).
pub fn train_probe(
    train: (&Tensor, &[usize]),
    val: Option<(&Tensor, &[usize])>,
    classes: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<(LinearProbe, ProbeReport)> {
    config.validate()?;
    let (x_raw, labels) = train;
    if labels.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    if x_raw.rank() != 2 {
        return Err(Error::InvalidShape(
            x_raw.shape().to_vec(),
            "probe features must be B×F",
        ));
    }
    check_labels(labels, x_raw.dim(0), classes)?;
    let f = x_raw.dim(1);
    let mut probe = LinearProbe::zeros(classes, f)?;
    let (mean, std) = feature_stats(x_raw, config.standardize_features);
    probe.mean = mean;
    probe.std = std;
    let x = probe.standardize(x_raw)?;
    let val = match val {
        Some((vx, vy)) if !vy.is_empty() => {
            check_labels(vy, vx.dim(0), classes)?;
            Some((probe.standardize(vx)?, vy))
        }
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut velocity_w = Tensor::zeros([classes, f])?;
    let mut velocity_b = vec![0.0; classes];
    let mut report = ProbeReport::default();
    let mut best: Option<(f64, LinearProbe)> = None;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 0..config.epochs {
        let lr = learning_rate_at(config.probe_lr, epoch, config.epochs);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let xb = gather_rows(&x, chunk)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, gw, gb) =
                softmax_cross_entropy(&probe.weights, &probe.bias, &xb, &yb, config.weight_decay)?;
            loss_sum += loss * chunk.len() as f64;
            velocity_w = velocity_w.scale(config.momentum).add(&gw)?;
            let step_w = if config.nesterov {
                gw.add(&velocity_w.scale(config.momentum))?
            } else {
                velocity_w.clone()
            };
            probe.weights = probe.weights.sub(&step_w.scale(lr))?;
            for ((b, v), g) in probe.bias.iter_mut().zip(&mut velocity_b).zip(&gb) {
                *v = config.momentum * *v + g;
                let step = if config.nesterov {
                    g + config.momentum * *v
                } else {
                    *v
                };
                *b -= lr * step;
            }
        }
        report.train_loss.push(loss_sum / labels.len() as f64);
        if let Some((vx, vy)) = &val {
            let scores = logits(&probe.weights, &probe.bias, vx)?;
            let acc = topk_accuracy(scores.data(), classes, vy, 1);
            report.val_accuracy.push(acc);
            if config.early_stopping && best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, probe.clone()));
                report.best_epoch = epoch;
            }
        }
    }
    if !probe.weights.all_finite() || probe.bias.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFiniteWeights);
    }
    match best {
        Some((_, kept)) => Ok((kept, report)),
        None => {
            report.best_epoch = config.epochs - 1;
            Ok((probe, report))
        }
    }
}

fn gather_rows(x: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let f = x.dim(1);
    let mut data = Vec::with_capacity(rows.len() * f);
    for &r in rows {
        data.extend_from_slice(&x.data()[r * f..(r + 1) * f]);
    }
    Tensor::new([rows.len(), f], data)
}
