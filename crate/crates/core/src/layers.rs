//! Hebbian dense and convolutional layers plus the fixed-function stages
//! (ReLU, max-pooling) used to stack them.
//!
//! A convolutional layer is trained by flattening every kernel window of
//! every image in the mini-batch into one large batch of `b_eff` rows, then
//! running the dense update kernels on it. Patch rows are laid out
//! channel-major, then row-major within the window, so each weight row reads
//! as a `C×kh×kw` kernel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{compute_update, forward_linear, LearningParams, UpdateImpl, UpdateResult};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn square(kernel: usize, in_channels: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            stride,
            padding,
        }
    }

    pub fn patch_size(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }
}

fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::Geometry("kernel and stride must be positive".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Geometry(format!(
            "kernel {kernel} does not fit input {input} with padding {padding}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn image_dims(images: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *images.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::Geometry(format!(
            "expected a B×C×H×W image batch, got {:?}",
            images.shape()
        ))),
    }
}

/// Where a patch came from: the image and the top-left corner of its window
/// in unpadded input coordinates (negative inside the padding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub image: usize,
    pub row: isize,
    pub col: isize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Debug, Clone)]
pub struct PatchBatch {
    /// `b_eff × 1 × S`.
    pub patches: Tensor,
    pub origins: Vec<PatchOrigin>,
    pub geometry: PatchGeometry,
}

impl PatchBatch {
    pub fn effective_batch(&self) -> usize {
        self.patches.dim(0)
    }
}

/// Flattens every `kernel` window of every image (zero padding) into one
/// batch, enumerated image-major and then row-major over window offsets.
pub fn extract_patches(
    images: &Tensor,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
) -> Result<PatchBatch> {
    let (b, c, h, w) = image_dims(images)?;
    let (kh, kw) = kernel;
    let out_h = output_extent(h, kh, stride, padding)?;
    let out_w = output_extent(w, kw, stride, padding)?;
    let size = c * kh * kw;
    let data = images.data();
    let mut patches = Vec::with_capacity(b * out_h * out_w * size);
    let mut origins = Vec::with_capacity(b * out_h * out_w);
    for img in 0..b {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let top = (oy * stride) as isize - padding as isize;
                let left = (ox * stride) as isize - padding as isize;
                origins.push(PatchOrigin {
                    image: img,
                    row: top,
                    col: left,
                });
                for ch in 0..c {
                    let plane = &data[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
                    for ky in 0..kh {
                        let y = top + ky as isize;
                        for kx in 0..kw {
                            let x = left + kx as isize;
                            let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
                            patches.push(if inside {
                                plane[y as usize * w + x as usize]
                            } else {
                                0.0
                            });
                        }
                    }
                }
            }
        }
    }
    let b_eff = origins.len();
    Ok(PatchBatch {
        patches: Tensor::new([b_eff, 1, size], patches)?,
        origins,
        geometry: PatchGeometry {
            channels: c,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h,
            out_w,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv(ConvGeometry),
}

#[derive(Debug, Clone)]
pub struct HebbLayer {
    weights: Tensor,
    pub params: LearningParams,
    pub kind: LayerKind,
    pub update_impl: UpdateImpl,
}

impl HebbLayer {
    /// Dense layer with `N(0, 1/S)` initial weights.
    pub fn dense<R: Rng + ?Sized>(
        neurons: usize,
        inputs: usize,
        params: LearningParams,
        update_impl: UpdateImpl,
        rng: &mut R,
    ) -> Result<Self> {
        let weights = Tensor::randn([1, neurons, inputs], 1.0 / (inputs as f64).sqrt(), rng)?;
        Self::with_weights(weights, params, LayerKind::Dense, update_impl)
    }

    /// Convolutional layer with `N(0, 1/S)` initial weights, `S = kh·kw·C`.
    pub fn conv<R: Rng + ?Sized>(
        neurons: usize,
        geometry: ConvGeometry,
        params: LearningParams,
        update_impl: UpdateImpl,
        rng: &mut R,
    ) -> Result<Self> {
        let size = geometry.patch_size();
        let weights = Tensor::randn([1, neurons, size], 1.0 / (size as f64).sqrt(), rng)?;
        Self::with_weights(weights, params, LayerKind::Conv(geometry), update_impl)
    }

    pub fn with_weights(
        weights: Tensor,
        params: LearningParams,
        kind: LayerKind,
        update_impl: UpdateImpl,
    ) -> Result<Self> {
        params.validate()?;
        if weights.rank() != 3 || weights.dim(0) != 1 {
            return Err(Error::InvalidShape(
                weights.shape().to_vec(),
                "weights must be 1×N×S",
            ));
        }
        if let LayerKind::Conv(g) = kind {
            if g.patch_size() != weights.dim(2) || g.stride == 0 {
                return Err(Error::Geometry(format!(
                    "conv weights {:?} do not match kernel {}×{}×{}",
                    weights.shape(),
                    g.in_channels,
                    g.kernel_h,
                    g.kernel_w
                )));
            }
        }
        if !weights.all_finite() {
            return Err(Error::NonFiniteWeights);
        }
        Ok(Self {
            weights,
            params,
            kind,
            update_impl,
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn neurons(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn input_size(&self) -> usize {
        self.weights.dim(2)
    }

    /// The `B×1×S` batch the update rule sees: flattened samples for a dense
    /// layer, the patch batch for a conv layer.
    pub fn rule_input(&self, input: &Tensor) -> Result<Tensor> {
        match self.kind {
            LayerKind::Dense => flatten_batch(input),
            LayerKind::Conv(g) => Ok(self.patches(input, g)?.patches),
        }
    }

    fn patches(&self, images: &Tensor, g: ConvGeometry) -> Result<PatchBatch> {
        let (_, c, _, _) = image_dims(images)?;
        if c != g.in_channels {
            return Err(Error::shape("conv input channels", &[g.in_channels], &[c]));
        }
        extract_patches(images, (g.kernel_h, g.kernel_w), g.stride, g.padding)
    }

    /// Dense: `B×N`. Conv: `B×N×out_h×out_w`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_rule_input(input)?.1)
    }

    /// The rule input together with the layer output, sharing one patch
    /// extraction.
    pub fn forward_with_rule_input(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let b = input.dim(0);
        let n = self.neurons();
        match self.kind {
            LayerKind::Dense => {
                let x = flatten_batch(input)?;
                if x.dim(2) != self.input_size() {
                    return Err(Error::shape(
                        "dense forward",
                        self.weights.shape(),
                        x.shape(),
                    ));
                }
                let y = forward_linear(&self.weights, &x)?.reshape([b, n])?;
                Ok((x, y))
            }
            LayerKind::Conv(g) => {
                let batch = self.patches(input, g)?;
                let (oh, ow) = (batch.geometry.out_h, batch.geometry.out_w);
                let y = forward_linear(&self.weights, &batch.patches)?
                    .reshape([b, oh * ow, n])?
                    .transpose(1, 2)?
                    .reshape([b, n, oh, ow])?;
                Ok((batch.patches, y))
            }
        }
    }
}

/// `B×…` → `B×1×F`.
pub fn flatten_batch(input: &Tensor) -> Result<Tensor> {
    let b = input.dim(0);
    let f = input.len() / b;
    input.clone().reshape([b, 1, f])
}

pub fn conv_forward(layer: &HebbLayer, images: &Tensor) -> Result<Tensor> {
    if !matches!(layer.kind, LayerKind::Conv(_)) {
        return Err(Error::Geometry(
            "conv_forward called on a dense layer".into(),
        ));
    }
    layer.forward(images)
}

/// Computes the layer's update for one input batch without touching its weights.
pub fn hebb_update(layer: &HebbLayer, input: &Tensor) -> Result<UpdateResult> {
    let x = layer.rule_input(input)?;
    compute_update(&layer.weights, &x, &layer.params, layer.update_impl)
}

/// `W ← W + ΔW`.
pub fn apply_update(mut layer: HebbLayer, result: &UpdateResult) -> Result<HebbLayer> {
    let updated = layer.weights.add(&result.delta_w)?;
    if updated.shape() != layer.weights.shape() {
        return Err(Error::shape(
            "apply_update",
            layer.weights.shape(),
            result.delta_w.shape(),
        ));
    }
    if !updated.all_finite() {
        return Err(Error::NonFiniteWeights);
    }
    layer.weights = updated;
    Ok(layer)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Max over `window×window` regions of each channel; no padding.
pub fn max_pool(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (b, c, h, w) = image_dims(x)?;
    let out_h = output_extent(h, window, stride, 0)?;
    let out_w = output_extent(w, window, stride, 0)?;
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    for plane in x.data().chunks_exact(h * w) {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..window {
                    let row = &plane[(oy * stride + ky) * w..];
                    for kx in 0..window {
                        best = best.max(row[ox * stride + kx]);
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new([b, c, out_h, out_w], out)
}

/// One step of a feature-extraction stack.
#[derive(Debug, Clone)]
pub enum Stage {
    Hebb(HebbLayer),
    Relu,
    MaxPool { window: usize, stride: usize },
}

impl Stage {
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Stage::Hebb(layer) => layer.forward(input),
            Stage::Relu => Ok(relu(input)),
            Stage::MaxPool { window, stride } => max_pool(input, *window, *stride),
        }
    }
}
