//! Soft winner-takes-all (SWTA) and Hebbian PCA (HPCA) update kernels.
//!
//! Each rule comes in two forms that compute the same `ΔW`:
//!
//! * **naive** builds the per-sample update `ΔW[b,n,s]` (a `B×N×S` tensor)
//!   and then aggregates it over the batch with coefficients `C[b,n]`;
//! * **fast** contracts the batch index first, so every temporary is at most
//!   `B×N`, `N×N` or `N×S` and the heavy lifting is done by matmuls.
//!
//! Shapes follow the (batch, neuron, size) convention: weights are `1×N×S`,
//! inputs `B×1×S`, outputs and scores `B×N×1`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::meter;
use crate::tensor::{tril_mask, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Swta,
    Hpca,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Swta => "swta",
            Rule::Hpca => "hpca",
        }
    }

    /// Stable numeric id used by the checkpoint format.
    pub fn id(self) -> u8 {
        match self {
            Rule::Swta => 0,
            Rule::Hpca => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Rule::Swta),
            1 => Some(Rule::Hpca),
            _ => None,
        }
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "swta" => Ok(Rule::Swta),
            "hpca" => Ok(Rule::Hpca),
            other => Err(Error::Config(format!("unknown rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateImpl {
    Naive,
    Fast,
}

impl UpdateImpl {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateImpl::Naive => "naive",
            UpdateImpl::Fast => "fast",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningParams {
    pub rule: Rule,
    pub eta: f64,
    /// Softmax temperature; only read by SWTA.
    pub temperature: f64,
    /// Subtract the batch mean from the inputs before computing the update.
    pub center_inputs: bool,
}

impl LearningParams {
    pub fn swta(eta: f64, temperature: f64) -> Self {
        Self {
            rule: Rule::Swta,
            eta,
            temperature,
            center_inputs: false,
        }
    }

    pub fn hpca(eta: f64) -> Self {
        Self {
            rule: Rule::Hpca,
            eta,
            temperature: 1.0,
            center_inputs: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidLearningRate(self.eta));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        Ok(())
    }
}

/// Auxiliary tensors produced while computing an update. Which ones are
/// present depends on the rule and form.
#[derive(Debug, Clone, Default)]
pub struct RuleIntermediates<T: Element = f64> {
    /// Competition scores `R`, `B×N×1` (SWTA).
    pub scores: Option<Tensor<T>>,
    /// Aggregation coefficients `C`, `B×N×1`.
    pub coefficients: Option<Tensor<T>>,
    /// `Q[n] = Σ_b C[b,n]·R[b,n]`, `1×N×1` (SWTA).
    pub q: Option<Tensor<T>>,
    /// Reconstruction residual `E`, `B×N×S` (HPCA naive).
    pub residual: Option<Tensor<T>>,
    /// Lower-triangular mask `L`, `N×N` (HPCA).
    pub mask: Option<Tensor<T>>,
    /// Masked Gram tensor `P = (YᵀY)∘L`, `1×N×N` (HPCA fast).
    pub gram_mask: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct UpdateResult<T: Element = f64> {
    /// `1×N×S`, learning rate already applied.
    pub delta_w: Tensor<T>,
    pub intermediates: RuleIntermediates<T>,
    pub flops_estimate: u64,
    /// Largest single tensor allocated while computing the update, in elements.
    pub peak_temp_elements: usize,
}

fn dims<T: Element>(w: &Tensor<T>, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (ws, xs) = (w.shape(), x.shape());
    if ws.len() != 3 || xs.len() != 3 || ws[0] != 1 || xs[1] != 1 || ws[2] != xs[2] {
        return Err(Error::shape("hebbian update", ws, xs));
    }
    Ok((xs[0], ws[1], ws[2]))
}

/// `Y[b,n] = Σ_s W[n,s]·X[b,s]`, returned as `B×N×1`.
pub fn forward_linear<T: Element>(w: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, n, s) = dims(w, x)?;
    let w_t = w.transpose(1, 2)?;
    x.view()
        .reshape([1, b, s])?
        .matmul(&w_t.view())?
        .reshape([b, n, 1])
}

/// Weighted sum over the batch: `ΔW[n,s] = Σ_b C[b,n]·per_sample[b,n,s]`.
pub fn aggregate<T: Element>(
    coefficients: &Tensor<T>,
    per_sample: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (cs, ps) = (coefficients.shape(), per_sample.shape());
    if cs.len() != 3 || ps.len() != 3 || cs[0] != ps[0] || cs[1] != ps[1] || cs[2] != 1 {
        return Err(Error::shape("aggregate", cs, ps));
    }
    per_sample.mul(coefficients)?.reduce_sum(0)
}

fn centered<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let b = T::from_f64(x.dim(0) as f64);
    let mean = x.reduce_sum(0)?.map(|v| v / b);
    x.sub(&mean)
}

/// `C = R / Σ_b R` per neuron. A neuron whose scores all underflowed to zero
/// gets zero coefficients, i.e. no update.
fn swta_coefficients<T: Element>(r: &Tensor<T>) -> Result<Tensor<T>> {
    let totals = r.reduce_sum(0)?;
    let n = r.dim(1);
    let (rd, td) = (r.data(), totals.data());
    Tensor::from_fn(r.shape().to_vec(), |i| {
        let total = td[i % n];
        if total > T::zero() {
            rd[i] / total
        } else {
            T::zero()
        }
    })
}

fn prepare<T: Element>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    params: &LearningParams,
    rule: Rule,
) -> Result<(usize, usize, usize)> {
    params.validate()?;
    debug_assert_eq!(params.rule, rule);
    dims(w, x)
}

fn inputs<'a, T: Element>(x: &'a Tensor<T>, params: &LearningParams) -> Result<Cow<'a, Tensor<T>>> {
    Ok(if params.center_inputs {
        Cow::Owned(centered(x)?)
    } else {
        Cow::Borrowed(x)
    })
}

type Measured<T> = (Result<(Tensor<T>, RuleIntermediates<T>)>, meter::AllocStats);

fn finish<T: Element>(measured: Measured<T>, flops: u64) -> Result<UpdateResult<T>> {
    let (out, stats) = measured;
    let (delta_w, intermediates) = out?;
    Ok(UpdateResult {
        delta_w,
        intermediates,
        flops_estimate: flops,
        peak_temp_elements: stats.peak_single,
    })
}

fn swta_scores<T: Element>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    temperature: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let r = forward_linear(w, x)?.softmax(1, temperature)?;
    let c = swta_coefficients(&r)?;
    Ok((r, c))
}

/// Reference SWTA: materialises `η·R[b,n]·(X[b,s] − W[n,s])` for every sample
/// and aggregates it with `C = R/Σ_b R`.
pub fn swta_update_naive<T: Element>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    params: &LearningParams,
) -> Result<UpdateResult<T>> {
    let (b, n, s) = prepare(w, x, params, Rule::Swta)?;
    let measured = meter::measure(|| {
        let x = inputs(x, params)?;
        let (r, c) = swta_scores(w, &x, params.temperature)?;
        let eta_r = r.scale(T::from_f64(params.eta));
        let per_sample = x.sub(w)?.mul(&eta_r)?;
        let delta_w = aggregate(&c, &per_sample)?;
        drop(per_sample);
        let q = c.mul(&r)?.reduce_sum(0)?;
        Ok((
            delta_w,
            RuleIntermediates {
                scores: Some(r),
                coefficients: Some(c),
                q: Some(q),
                ..Default::default()
            },
        ))
    });
    let (b, n, s) = (b as u64, n as u64, s as u64);
    finish(measured, 2 * b * n * s + 4 * b * n * s + 6 * b * n)
}

/// SWTA with the batch contracted first:
/// `ΔW = η·(CR)ᵀX − η·Q∘W` with `Q = Σ_b CR`.
pub fn swta_update_fast<T: Element>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    params: &LearningParams,
) -> Result<UpdateResult<T>> {
    let (b, n, s) = prepare(w, x, params, Rule::Swta)?;
    let measured = meter::measure(|| {
        let x = inputs(x, params)?;
        let (r, c) = swta_scores(w, &x, params.temperature)?;
        let cr = c.mul(&r)?;
        let q = cr.reduce_sum(0)?;
        let cr_t = cr.transpose(0, 1)?.reshape([1, n, b])?;
        let pulled = cr_t.view().matmul(&x.view().reshape([1, b, s])?)?;
        let eta = T::from_f64(params.eta);
        let delta_w = pulled.sub(&w.mul(&q)?)?.scale(eta);
        Ok((
            delta_w,
            RuleIntermediates {
                scores: Some(r),
                coefficients: Some(c),
                q: Some(q),
                ..Default::default()
            },
        ))
    });
    let (b, n, s) = (b as u64, n as u64, s as u64);
    finish(
        measured,
        2 * b * n * s + 2 * b * n * s + 7 * b * n + 3 * n * s,
    )
}

/// `E[b,n,s] = X[b,s] − Σ_{n'} L[n,n']·Y[b,n']·W[n',s]`, evaluated directly.
fn hpca_residual<T: Element>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, n, s) = dims(w, x)?;
    let (wd, xd, yd, ld) = (w.data(), x.data(), y.data(), mask.data());
    let mut e = Vec::with_capacity(b * n * s);
    for bi in 0..b {
        let x_row = &xd[bi * s..(bi + 1) * s];
        let y_row = &yd[bi * n..(bi + 1) * n];
        for ni in 0..n {
            let start = e.len();
            e.extend_from_slice(x_row);
            let e_row = &mut e[start..];
            for (nj, &l) in ld[ni * n..(ni + 1) * n].iter().enumerate() {
                if l == T::zero() {
                    continue;
                }
                let coef = l * y_row[nj];
                for (ev, &wv) in e_row.iter_mut().zip(&wd[nj * s..(nj + 1) * s]) {
                    *ev -= coef * wv;
                }
            }
        }
    }
    Tensor::new([b, n, s], e)
}

/// Reference HPCA: materialises the residual `E` and the per-sample update
/// `η·Y[b,n]·E[b,n,s]`, then averages over the batch.
pub fn hpca_update_naive<T: Element>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    params: &LearningParams,
) -> Result<UpdateResult<T>> {
    let (b, n, s) = prepare(w, x, params, Rule::Hpca)?;
    let measured = meter::measure(|| {
        let x = inputs(x, params)?;
        let y = forward_linear(w, &x)?;
        let mask = tril_mask::<T>(n)?;
        let residual = hpca_residual(w, &x, &y, &mask)?;
        let per_sample = residual.mul(&y.scale(T::from_f64(params.eta)))?;
        let c = Tensor::full([b, n, 1], T::one() / T::from_f64(b as f64))?;
        let delta_w = aggregate(&c, &per_sample)?;
        Ok((
            delta_w,
            RuleIntermediates {
                coefficients: Some(c),
                residual: Some(residual),
                mask: Some(mask),
                ..Default::default()
            },
        ))
    });
    let (b, n, s) = (b as u64, n as u64, s as u64);
    finish(
        measured,
        2 * b * n * s + b * n * (n + 1) * s + 4 * b * n * s + b * n,
    )
}

/// HPCA with the batch contracted first:
/// `ΔW = (η/B)·(YᵀX − P·W)` with `P = (YᵀY)∘L`.
pub fn hpca_update_fast<T: Element>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    params: &LearningParams,
) -> Result<UpdateResult<T>> {
    let (b, n, s) = prepare(w, x, params, Rule::Hpca)?;
    let measured = meter::measure(|| {
        let x = inputs(x, params)?;
        let y = forward_linear(w, &x)?;
        let y_t = y.transpose(0, 1)?.reshape([1, n, b])?;
        let yx = y_t.view().matmul(&x.view().reshape([1, b, s])?)?;
        let gram = y_t.view().matmul(&y.view().reshape([1, b, n])?)?;
        let mask = tril_mask::<T>(n)?;
        let p = gram.mul(&mask)?;
        let pw = p.matmul(w)?;
        let factor = T::from_f64(params.eta / b as f64);
        let delta_w = yx.sub(&pw)?.scale(factor);
        Ok((
            delta_w,
            RuleIntermediates {
                mask: Some(mask),
                gram_mask: Some(p),
                ..Default::default()
            },
        ))
    });
    let (b, n, s) = (b as u64, n as u64, s as u64);
    finish(
        measured,
        2 * b * n * s + 2 * b * n * s + 2 * b * n * n + n * n + 2 * n * n * s + 2 * n * s,
    )
}

/// Dispatches on rule and form.
pub fn compute_update<T: Element>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    params: &LearningParams,
    form: UpdateImpl,
) -> Result<UpdateResult<T>> {
    match (params.rule, form) {
        (Rule::Swta, UpdateImpl::Naive) => swta_update_naive(w, x, params),
        (Rule::Swta, UpdateImpl::Fast) => swta_update_fast(w, x, params),
        (Rule::Hpca, UpdateImpl::Naive) => hpca_update_naive(w, x, params),
        (Rule::Hpca, UpdateImpl::Fast) => hpca_update_fast(w, x, params),
    }
}

/// Per-batch training signal: mean over samples of the largest SWTA score,
/// or mean norm of the full HPCA reconstruction residual `x − Σ_n y_n w_n`.
pub fn batch_metric(w: &Tensor, x: &Tensor, params: &LearningParams) -> Result<f64> {
    let (b, n, s) = dims(w, x)?;
    let y = forward_linear(w, x)?;
    match params.rule {
        Rule::Swta => {
            let r = y.softmax(1, params.temperature)?;
            let total: f64 = r
                .data()
                .chunks_exact(n)
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .sum();
            Ok(total / b as f64)
        }
        Rule::Hpca => {
            let recon = y.view().reshape([1, b, n])?.matmul(&w.view())?;
            let total: f64 = x
                .data()
                .chunks_exact(s)
                .zip(recon.data().chunks_exact(s))
                .map(|(xr, rr)| {
                    xr.iter()
                        .zip(rr)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum();
            Ok(total / b as f64)
        }
    }
}
