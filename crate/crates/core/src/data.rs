//! Datasets: the CIFAR-10 binary reader, seeded synthetic generators, the
//! `FHDS` dump format and label-fraction (sample-efficiency regime) splits.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const FHDS_MAGIC: [u8; 4] = *b"FHDS";
pub const FHDS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// Samples stored as a flat `len × C × H × W` buffer. Unlike [`Tensor`], a
/// dataset may be empty (e.g. the unlabeled part of a 100% regime).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: [usize; 3],
    pixels: Vec<f64>,
    labels: Vec<usize>,
    class_count: usize,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(
        sample_shape: [usize; 3],
        pixels: Vec<f64>,
        labels: Vec<usize>,
        class_count: usize,
        split: SplitTag,
    ) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::InvalidShape(
                sample_shape.to_vec(),
                "pixel count does not match labels",
            ));
        }
        if class_count == 0 {
            return Err(Error::Config("class_count must be positive".into()));
        }
        if let Some((record, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::BadLabel {
                record,
                label: label.min(u8::MAX as usize) as u8,
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptFile("non-finite sample value".into()));
        }
        Ok(Self {
            sample_shape,
            pixels,
            labels,
            class_count,
            split,
        })
    }

    pub fn from_images(
        images: &Tensor,
        labels: Vec<usize>,
        class_count: usize,
        split: SplitTag,
    ) -> Result<Self> {
        let [_, c, h, w] = images.shape() else {
            return Err(Error::InvalidShape(
                images.shape().to_vec(),
                "expected B×C×H×W",
            ));
        };
        Self::new(
            [*c, *h, *w],
            images.data().to_vec(),
            labels,
            class_count,
            split,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let per = self.sample_len();
        &self.pixels[i * per..(i + 1) * per]
    }

    /// All samples as a `B×C×H×W` tensor, `None` when empty.
    pub fn images(&self) -> Option<Tensor> {
        if self.is_empty() {
            return None;
        }
        let [c, h, w] = self.sample_shape;
        Tensor::new([self.len(), c, h, w], self.pixels.clone()).ok()
    }

    /// Gathers the given samples into a `B×C×H×W` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let per = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let [c, h, w] = self.sample_shape;
        Tensor::new([indices.len(), c, h, w], data)
    }

    pub fn subset(&self, indices: &[usize], split: SplitTag) -> Dataset {
        let per = self.sample_len();
        let mut pixels = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            pixels.extend_from_slice(self.sample(i));
        }
        Dataset {
            sample_shape: self.sample_shape,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split,
        }
    }

    /// Per-channel `(mean, std)` over every sample and pixel.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let [c, h, w] = self.sample_shape;
        let plane = h * w;
        (0..c)
            .map(|ch| {
                let values =
                    (0..self.len()).flat_map(|i| &self.sample(i)[ch * plane..(ch + 1) * plane]);
                let n = (self.len() * plane).max(1) as f64;
                let mean = values.clone().sum::<f64>() / n;
                let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }

    /// Applies `(v − mean_c) / std_c` per channel using the given statistics.
    pub fn standardized(&self, stats: &[(f64, f64)]) -> Dataset {
        let [_, h, w] = self.sample_shape;
        let plane = h * w;
        let channels = self.sample_shape[0];
        let mut out = self.clone();
        for (i, v) in out.pixels.iter_mut().enumerate() {
            let (mean, std) = stats[(i / plane) % channels];
            *v = (*v - mean) / if std > 0.0 { std } else { 1.0 };
        }
        out
    }
}

/// Parses concatenated CIFAR-10 binary records: one label byte followed by
/// 1024 red, 1024 green and 1024 blue bytes, each plane row-major.
pub fn parse_cifar10(bytes: &[u8], split: SplitTag) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::TruncatedFile { len: bytes.len() });
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count * (CIFAR_RECORD - 1));
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if chunk[0] > 9 {
            return Err(Error::BadLabel {
                record,
                label: chunk[0],
            });
        }
        labels.push(chunk[0] as usize);
        pixels.extend(chunk[1..].iter().map(|&v| v as f64 / 255.0));
    }
    Dataset::new([3, 32, 32], pixels, labels, 10, split)
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_cifar10(&fs::read(path)?, SplitTag::Train)
}

/// Loads and concatenates several CIFAR-10 batch files.
pub fn load_cifar10_files<P: AsRef<Path>>(paths: &[P], split: SplitTag) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for path in paths {
        bytes.extend(fs::read(path)?);
    }
    parse_cifar10(&bytes, split)
}

/// Encodes a `3×32×32` dataset as CIFAR-10 records, quantising to `round(v·255)`.
pub fn encode_cifar10(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.sample_shape != [3, 32, 32] || dataset.class_count > 10 {
        return Err(Error::InvalidShape(
            dataset.sample_shape.to_vec(),
            "CIFAR-10 records hold 3×32×32 images with at most 10 classes",
        ));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD);
    for i in 0..dataset.len() {
        out.push(dataset.labels[i] as u8);
        out.extend(
            dataset
                .sample(i)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

pub fn write_cifar10(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    fs::write(path, encode_cifar10(dataset)?)?;
    Ok(())
}

/// `FHDS` dump: magic, `u32` version, `u32` rank, `u32` extents
/// (`B, C, H, W`), the samples as little-endian `f64`, then `u32` class count
/// and one `u32` label per sample.
pub fn encode_fhds(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + dataset.pixels.len() * 8 + dataset.len() * 4 + 8);
    out.extend_from_slice(&FHDS_MAGIC);
    out.extend_from_slice(&FHDS_VERSION.to_le_bytes());
    out.extend_from_slice(&4u32.to_le_bytes());
    let [c, h, w] = dataset.sample_shape;
    for extent in [dataset.len(), c, h, w] {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for v in &dataset.pixels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(dataset.class_count as u32).to_le_bytes());
    for &l in &dataset.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::CorruptFile(format!("unexpected end of data at byte {}", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_fhds(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != FHDS_MAGIC {
        return Err(Error::BadMagic {
            expected: FHDS_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != FHDS_VERSION {
        return Err(Error::VersionMismatch {
            expected: FHDS_VERSION,
            found: version,
        });
    }
    if r.u32()? != 4 {
        return Err(Error::CorruptFile("FHDS rank must be 4".into()));
    }
    let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
    let count = dims.iter().product::<usize>();
    if count.saturating_mul(8) > bytes.len() {
        return Err(Error::CorruptFile("FHDS extents exceed file size".into()));
    }
    let pixels = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let class_count = r.u32()? as usize;
    let labels = (0..dims[0])
        .map(|_| r.u32().map(|l| l as usize))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::CorruptFile(
            "trailing bytes after FHDS payload".into(),
        ));
    }
    Dataset::new(
        [dims[1], dims[2], dims[3]],
        pixels,
        labels,
        class_count,
        SplitTag::Train,
    )
}

pub fn write_fhds(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_fhds(dataset))?;
    Ok(())
}

pub fn read_fhds(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_fhds(&fs::read(path)?)
}

/// Symmetric positive-definite covariance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    dims: usize,
    entries: Vec<f64>,
}

impl Covariance {
    pub fn full(dims: usize, entries: Vec<f64>) -> Result<Self> {
        if dims == 0 || entries.len() != dims * dims {
            return Err(Error::BadCovariance);
        }
        Ok(Self { dims, entries })
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        let d = variances.len();
        let mut entries = vec![0.0; d * d];
        for (i, &v) in variances.iter().enumerate() {
            entries[i * d + i] = v;
        }
        Self::full(d, entries)
    }

    /// `R(angle)·diag(v0, v1)·R(angle)ᵀ` in two dimensions.
    pub fn rotated_2d(v0: f64, v1: f64, angle: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        let a = v0 * c * c + v1 * s * s;
        let b = (v0 - v1) * c * s;
        let d = v0 * s * s + v1 * c * c;
        Self::full(2, vec![a, b, b, d])
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let m = DMatrix::from_row_slice(self.dims, self.dims, &self.entries);
        if (&m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
            return Err(Error::BadCovariance);
        }
        m.cholesky().map(|c| c.l()).ok_or(Error::BadCovariance)
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `num` zero-mean Gaussian vectors with the given covariance, shaped
/// `1×1×dims` per sample, all labeled 0.
pub fn synth_gaussian(num: usize, covariance: &Covariance, seed: u64) -> Result<Dataset> {
    let chol = covariance.cholesky()?;
    let d = covariance.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(num * d);
    let mut z = vec![0.0; d];
    for _ in 0..num {
        z.iter_mut().for_each(|v| *v = standard_normal(&mut rng));
        for row in 0..d {
            pixels.push((0..=row).map(|k| chol[(row, k)] * z[k]).sum());
        }
    }
    Dataset::new([1, 1, d], pixels, vec![0; num], 1, SplitTag::Train)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSpec {
    pub clusters: usize,
    pub num: usize,
    pub dims: usize,
    /// Distance between any two centroids.
    pub separation: f64,
    /// Per-coordinate standard deviation around each centroid.
    pub sigma: f64,
}

/// Isotropic Gaussian clusters around equal-norm, mutually orthogonal
/// centroids `(separation/√2)·e_k`. Sample `i` belongs to cluster `i mod k`.
/// Returns the dataset (shaped `1×1×dims`) and the true centroids.
pub fn synth_clusters(spec: &ClusterSpec, seed: u64) -> Result<(Dataset, Vec<Vec<f64>>)> {
    let ClusterSpec {
        clusters,
        num,
        dims,
        separation,
        sigma,
    } = *spec;
    if clusters == 0
        || clusters > dims
        || separation.is_nan()
        || separation <= 0.0
        || sigma.is_nan()
        || sigma < 0.0
    {
        return Err(Error::Config(format!(
            "cluster generator needs 1 ≤ k ≤ dims and positive separation, got k={clusters} dims={dims}"
        )));
    }
    let radius = separation / std::f64::consts::SQRT_2;
    let centroids: Vec<Vec<f64>> = (0..clusters)
        .map(|k| {
            (0..dims)
                .map(|d| if d == k { radius } else { 0.0 })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(num * dims);
    let mut labels = Vec::with_capacity(num);
    for i in 0..num {
        let k = i % clusters;
        labels.push(k);
        pixels.extend(
            centroids[k]
                .iter()
                .map(|&c| c + sigma * standard_normal(&mut rng)),
        );
    }
    Ok((
        Dataset::new([1, 1, dims], pixels, labels, clusters, SplitTag::Train)?,
        centroids,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageClusterSpec {
    pub classes: usize,
    pub num: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Contrast of the class prototypes around mid-grey.
    pub amplitude: f64,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
}

/// Images drawn around one random prototype per class:
/// `clip(0.5 + amplitude·(2p − 1) + noise·z, 0, 1)` with `p ~ U[0,1)`.
pub fn synth_cluster_images(spec: &ImageClusterSpec, seed: u64) -> Result<Dataset> {
    let per = spec.channels * spec.height * spec.width;
    if spec.classes == 0 || per == 0 {
        return Err(Error::Config(
            "image generator needs classes and a non-empty image shape".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..per).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let mut pixels = Vec::with_capacity(spec.num * per);
    let mut labels = Vec::with_capacity(spec.num);
    for _ in 0..spec.num {
        let k = rng.gen_range(0..spec.classes);
        labels.push(k);
        pixels.extend(prototypes[k].iter().map(|&p| {
            let v = 0.5 + spec.amplitude * (2.0 * p - 1.0) + spec.noise * standard_normal(&mut rng);
            v.clamp(0.0, 1.0)
        }));
    }
    Dataset::new(
        [spec.channels, spec.height, spec.width],
        pixels,
        labels,
        spec.classes,
        SplitTag::Train,
    )
}

/// A sample-efficiency regime: only `labeled_percent`% of the training set
/// keeps its labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regime {
    labeled_percent: u32,
    pub seed: u64,
}

impl Regime {
    pub const LEVELS: [u32; 8] = [1, 2, 3, 4, 5, 10, 25, 100];

    pub fn new(labeled_percent: u32, seed: u64) -> Result<Self> {
        if !Self::LEVELS.contains(&labeled_percent) {
            return Err(Error::Config(format!(
                "labeled fraction must be one of {:?} percent, got {labeled_percent}",
                Self::LEVELS
            )));
        }
        Ok(Self {
            labeled_percent,
            seed,
        })
    }

    pub fn labeled_percent(&self) -> u32 {
        self.labeled_percent
    }

    /// `round(s/100 · total)`, halves rounded up.
    pub fn labeled_count(&self, total: usize) -> usize {
        (self.labeled_percent as usize * total + 50) / 100
    }
}

/// Picks `count` indices spread as evenly as possible across classes
/// (per-class counts differ by at most one unless a class runs out).
/// Returned indices are sorted.
fn stratified_pick(labels: &[usize], class_count: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut taken = vec![0usize; class_count];
    let mut picked = Vec::with_capacity(count);
    let count = count.min(labels.len());
    while picked.len() < count {
        for (class, pool) in pools.iter().enumerate() {
            if picked.len() == count {
                break;
            }
            if taken[class] < pool.len() {
                picked.push(pool[taken[class]]);
                taken[class] += 1;
            }
        }
    }
    picked.sort_unstable();
    picked
}

fn complement(total: usize, picked: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; total];
    for &i in picked {
        mask[i] = true;
    }
    (0..total).filter(|&i| !mask[i]).collect()
}

/// Splits a training set into its labeled and unlabeled parts.
pub fn split_regime(dataset: &Dataset, regime: &Regime) -> (Dataset, Dataset) {
    let labeled = stratified_pick(
        &dataset.labels,
        dataset.class_count,
        regime.labeled_count(dataset.len()),
        regime.seed,
    );
    let unlabeled = complement(dataset.len(), &labeled);
    (
        dataset.subset(&labeled, dataset.split),
        dataset.subset(&unlabeled, dataset.split),
    )
}

/// Stratified hold-out split: `round(held_fraction · len)` samples go to the
/// second set (tagged `held_tag`), the rest stay in the first.
pub fn holdout_split(
    dataset: &Dataset,
    held_fraction: f64,
    held_tag: SplitTag,
    seed: u64,
) -> (Dataset, Dataset) {
    let held_count = (held_fraction.clamp(0.0, 1.0) * dataset.len() as f64).round() as usize;
    let held = stratified_pick(&dataset.labels, dataset.class_count, held_count, seed);
    let kept = complement(dataset.len(), &held);
    (
        dataset.subset(&kept, dataset.split),
        dataset.subset(&held, held_tag),
    )
}

/// The default 80/20 train/validation split.
pub fn train_val_split(dataset: &Dataset, seed: u64) -> (Dataset, Dataset) {
    holdout_split(dataset, 0.2, SplitTag::Val, seed)
}
