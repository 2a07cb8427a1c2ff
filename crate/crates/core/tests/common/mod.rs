//! Independent reference implementations shared by the integration tests.
//! Everything here is written with plain scalar loops over `Vec<f64>` and
//! does not call into the library's tensor kernels.

#![allow(dead_code)]

use fasthebb::data::Dataset;
use fasthebb::data::{holdout_split, split_regime, Regime, SplitTag};
use fasthebb::pipeline::{evaluate, extract_features, pretrain, train_probe, Stack, TrainConfig};
use fasthebb::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};

/// `N×S` rows of a `1×N×S` weight tensor.
pub fn rows(w: &Tensor) -> Vec<Vec<f64>> {
    let s = w.dim(2);
    w.data().chunks(s).map(|r| r.to_vec()).collect()
}

fn softmax(y: &[f64], t: f64) -> Vec<f64> {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = y.iter().map(|v| ((v - m) / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Per-sample soft winner-takes-all update, aggregated with
/// `C[b,n] = R[b,n] / Σ_b R[b,n]`.
pub fn swta_oracle(w: &[Vec<f64>], x: &[Vec<f64>], eta: f64, t: f64) -> Vec<Vec<f64>> {
    let (n, s) = (w.len(), w[0].len());
    let r: Vec<Vec<f64>> = x
        .iter()
        .map(|xb| {
            let y: Vec<f64> = w
                .iter()
                .map(|wn| wn.iter().zip(xb).map(|(a, b)| a * b).sum())
                .collect();
            softmax(&y, t)
        })
        .collect();
    let mut dw = vec![vec![0.0; s]; n];
    for ni in 0..n {
        let total: f64 = r.iter().map(|rb| rb[ni]).sum();
        if total == 0.0 {
            continue;
        }
        for (xb, rb) in x.iter().zip(&r) {
            let c = rb[ni] / total;
            for si in 0..s {
                dw[ni][si] += c * eta * rb[ni] * (xb[si] - w[ni][si]);
            }
        }
    }
    dw
}

/// Per-sample Hebbian PCA update averaged over the batch:
/// `η/B Σ_b y_n (x − Σ_{m≤n} y_m w_m)`.
pub fn hpca_oracle(w: &[Vec<f64>], x: &[Vec<f64>], eta: f64) -> Vec<Vec<f64>> {
    let (n, s) = (w.len(), w[0].len());
    let mut dw = vec![vec![0.0; s]; n];
    for xb in x {
        let y: Vec<f64> = w
            .iter()
            .map(|wn| wn.iter().zip(xb).map(|(a, b)| a * b).sum())
            .collect();
        for ni in 0..n {
            for si in 0..s {
                let recon: f64 = (0..=ni).map(|m| y[m] * w[m][si]).sum();
                dw[ni][si] += eta / x.len() as f64 * y[ni] * (xb[si] - recon);
            }
        }
    }
    dw
}

pub fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn rel_frobenius(candidate: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = candidate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let norm: f64 = reference.iter().map(|v| v * v).sum();
    diff.sqrt() / norm.sqrt().max(1e-30)
}

/// Zero-padded direct convolution, `B×C×H×W` images with `N×(C·kh·kw)`
/// weights laid out channel, then kernel row, then kernel column.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    images: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    weights: &[f64],
    n: usize,
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * n * oh * ow];
    for bi in 0..b {
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let x = (ox * stride + kx) as isize - pad as isize;
                                if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
                                    continue;
                                }
                                let pixel =
                                    images[((bi * c + ci) * h + y as usize) * w + x as usize];
                                acc += weights[ni * c * kh * kw + (ci * kh + ky) * kw + kx] * pixel;
                            }
                        }
                    }
                    out[((bi * n + ni) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Windows of the same convolution as rows, image-major then row-major.
pub fn patch_rows(
    images: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<Vec<f64>> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut row = Vec::with_capacity(c * kh * kw);
                for ci in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let x = (ox * stride + kx) as isize - pad as isize;
                            let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
                            row.push(if inside {
                                images[((bi * c + ci) * h + y as usize) * w + x as usize]
                            } else {
                                0.0
                            });
                        }
                    }
                }
                out.push(row);
            }
        }
    }
    out
}

/// Eigenvectors of the uncentered second-moment matrix `(1/B)·XᵀX`, sorted
/// by descending eigenvalue.
pub fn second_moment_eigen(x: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let s = x[0].len();
    let mut m = DMatrix::<f64>::zeros(s, s);
    for xb in x {
        for i in 0..s {
            for j in 0..s {
                m[(i, j)] += xb[i] * xb[j] / x.len() as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Greedy matching of weight rows to centroids (closest pair first); returns
/// the largest matched distance.
pub fn greedy_match_error(rows: &[Vec<f64>], centroids: &[Vec<f64>]) -> f64 {
    let mut pairs: Vec<(f64, usize, usize)> = rows
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            centroids
                .iter()
                .enumerate()
                .map(move |(j, c)| (distance(r, c), i, j))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut used_rows = vec![false; rows.len()];
    let mut used_centroids = vec![false; centroids.len()];
    let mut worst: f64 = 0.0;
    for (d, i, j) in pairs {
        if !used_rows[i] && !used_centroids[j] {
            used_rows[i] = true;
            used_centroids[j] = true;
            worst = worst.max(d);
        }
    }
    worst
}

/// Semi-supervised protocol on an already built stack: optional Hebbian
/// pretraining on every training image, then a probe fitted on the labeled
/// fraction and scored on the test set.
pub fn probe_accuracy(
    stack: Stack,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    regime: Regime,
    pretrain_seed: Option<u64>,
) -> f64 {
    let stack = match pretrain_seed {
        Some(seed) => pretrain(stack, train.unlabeled(), config, seed).unwrap().0,
        None => stack,
    };
    let (fit, val) = holdout_split(train, config.val_fraction, SplitTag::Val, regime.seed);
    let (labeled, _) = split_regime(&fit, &regime);
    let feats = |ds: &Dataset| {
        extract_features(&stack, ds.unlabeled(), config.batch_size)
            .unwrap()
            .unwrap()
    };
    let (x, vx, tx) = (feats(&labeled), feats(&val), feats(test));
    let (probe, _) = train_probe(
        (&x, labeled.labels()),
        Some((&vx, val.labels())),
        train.class_count(),
        config,
        regime.seed,
    )
    .unwrap();
    evaluate(&probe, &tx, test.labels(), 1).unwrap()
}
