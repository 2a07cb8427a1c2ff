//! Experiment configuration files (TOML). Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! kind = "clusters"
//! clusters = 3
//! num = 600
//! dims = 3
//! separation = 0.5
//! sigma = 0.05
//!
//! [train]
//! epochs = 10
//!
//! [[layer]]
//! type = "dense"
//! rule = "swta"
//! neurons = 3
//! temperature = 0.05
//! ```

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    holdout_split, load_cifar10_files, read_fhds, synth_cluster_images, synth_clusters,
    synth_gaussian, ClusterSpec, Covariance, Dataset, ImageClusterSpec, SplitTag,
};
use crate::error::{Error, Result};
use crate::layers::{ConvGeometry, HebbLayer, Stage};
use crate::pipeline::{Stack, TrainConfig};
use crate::rules::{LearningParams, Rule, UpdateImpl};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, rename = "layer")]
    pub layers: Vec<StageConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Clusters {
        clusters: usize,
        num: usize,
        dims: usize,
        separation: f64,
        sigma: f64,
    },
    Gaussian {
        num: usize,
        /// Diagonal of the covariance before rotation.
        variances: Vec<f64>,
        /// Rotation angle in radians; two dimensions only.
        #[serde(default)]
        angle: f64,
    },
    Images {
        classes: usize,
        num: usize,
        channels: usize,
        height: usize,
        width: usize,
        amplitude: f64,
        noise: f64,
    },
    Cifar10 {
        train_files: Vec<PathBuf>,
        test_file: PathBuf,
        #[serde(default = "yes")]
        standardize: bool,
    },
    Fhds {
        path: PathBuf,
    },
}

fn yes() -> bool {
    true
}

fn default_stride() -> usize {
    1
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum StageConfig {
    Dense {
        rule: Rule,
        neurons: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
        /// Overrides `train.hebb_lr` for this layer.
        lr: Option<f64>,
        #[serde(default)]
        center: bool,
        #[serde(default = "fast", rename = "impl")]
        update_impl: UpdateImpl,
    },
    Conv {
        rule: Rule,
        neurons: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
        lr: Option<f64>,
        #[serde(default)]
        center: bool,
        #[serde(default = "fast", rename = "impl")]
        update_impl: UpdateImpl,
    },
    Relu,
    Pool {
        window: usize,
        stride: Option<usize>,
    },
}

fn fast() -> UpdateImpl {
    UpdateImpl::Fast
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.train.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form, stored in checkpoints.
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Training and test sets. Synthetic and `FHDS` sources hold out
    /// `train.test_fraction` of the samples as the test set.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let held = |ds: Dataset| {
            holdout_split(
                &ds,
                self.train.test_fraction,
                SplitTag::Test,
                self.seed ^ 0x7e57,
            )
        };
        Ok(match &self.data {
            DataConfig::Clusters {
                clusters,
                num,
                dims,
                separation,
                sigma,
            } => {
                let spec = ClusterSpec {
                    clusters: *clusters,
                    num: *num,
                    dims: *dims,
                    separation: *separation,
                    sigma: *sigma,
                };
                held(synth_clusters(&spec, self.seed)?.0)
            }
            DataConfig::Gaussian {
                num,
                variances,
                angle,
            } => {
                let cov = if variances.len() == 2 {
                    Covariance::rotated_2d(variances[0], variances[1], *angle)?
                } else {
                    Covariance::diagonal(variances)?
                };
                held(synth_gaussian(*num, &cov, self.seed)?)
            }
            DataConfig::Images {
                classes,
                num,
                channels,
                height,
                width,
                amplitude,
                noise,
            } => {
                let spec = ImageClusterSpec {
                    classes: *classes,
                    num: *num,
                    channels: *channels,
                    height: *height,
                    width: *width,
                    amplitude: *amplitude,
                    noise: *noise,
                };
                held(synth_cluster_images(&spec, self.seed)?)
            }
            DataConfig::Cifar10 {
                train_files,
                test_file,
                standardize,
            } => {
                let train = load_cifar10_files(train_files, SplitTag::Train)?;
                let test = load_cifar10_files(std::slice::from_ref(test_file), SplitTag::Test)?;
                if *standardize {
                    let stats = train.channel_stats();
                    (train.standardized(&stats), test.standardized(&stats))
                } else {
                    (train, test)
                }
            }
            DataConfig::Fhds { path } => held(read_fhds(path)?),
        })
    }
}

/// Builds the stack for samples of shape `C×H×W`, drawing initial weights
/// from `rng`.
pub fn build_stack<R: Rng + ?Sized>(
    stages: &[StageConfig],
    sample_shape: [usize; 3],
    train: &TrainConfig,
    rng: &mut R,
) -> Result<Stack> {
    let mut shape: Vec<usize> = sample_shape.to_vec();
    let mut out = Vec::with_capacity(stages.len());
    for (i, stage) in stages.iter().enumerate() {
        let built = match *stage {
            StageConfig::Dense {
                rule,
                neurons,
                temperature,
                lr,
                center,
                update_impl,
            } => {
                let params = params(rule, lr.unwrap_or(train.hebb_lr), temperature, center)?;
                let inputs = shape.iter().product();
                Stage::Hebb(HebbLayer::dense(neurons, inputs, params, update_impl, rng)?)
            }
            StageConfig::Conv {
                rule,
                neurons,
                kernel,
                stride,
                padding,
                temperature,
                lr,
                center,
                update_impl,
            } => {
                if shape.len() != 3 {
                    return Err(Error::Config(format!(
                        "layer {i}: conv needs C×H×W input, got {shape:?}"
                    )));
                }
                let params = params(rule, lr.unwrap_or(train.hebb_lr), temperature, center)?;
                let geometry = ConvGeometry::square(kernel, shape[0], stride, padding);
                Stage::Hebb(HebbLayer::conv(
                    neurons,
                    geometry,
                    params,
                    update_impl,
                    rng,
                )?)
            }
            StageConfig::Relu => Stage::Relu,
            StageConfig::Pool { window, stride } => Stage::MaxPool {
                window,
                stride: stride.unwrap_or(window),
            },
        };
        let mut probe_shape = vec![1];
        probe_shape.extend(&shape);
        shape = built
            .forward(&Tensor::zeros(probe_shape)?)
            .map_err(|e| Error::Config(format!("layer {i}: {e}")))?
            .shape()[1..]
            .to_vec();
        out.push(built);
    }
    Ok(Stack::new(out))
}

fn params(rule: Rule, eta: f64, temperature: f64, center: bool) -> Result<LearningParams> {
    let p = LearningParams {
        rule,
        eta,
        temperature,
        center_inputs: center,
    };
    p.validate()?;
    Ok(p)
}

/// Replaces the weights of the stack's Hebbian layers, in order.
pub fn load_weights(stack: &mut Stack, weights: Vec<Tensor>) -> Result<()> {
    let count = stack.hebb_layers().count();
    if count != weights.len() {
        return Err(Error::CorruptFile(format!(
            "checkpoint has {} layers, config builds {count}",
            weights.len()
        )));
    }
    for (layer, w) in stack.hebb_layers_mut().zip(weights) {
        *layer = HebbLayer::with_weights(w, layer.params, layer.kind, layer.update_impl)?;
    }
    Ok(())
}
