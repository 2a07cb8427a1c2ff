use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Element, Tensor, TensorView};
use crate::error::{Error, Result};

static THREADS: AtomicUsize = AtomicUsize::new(1);

/// Sets the worker count used by [`Tensor::matmul`]. Values below 1 are
/// clamped to 1.
///
/// Work is split by output rows only, and each output element is still
/// accumulated in ascending contraction order, so results are bitwise
/// identical for every thread count.
pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ElementwiseOp {
    #[inline]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::Div => a / b,
        }
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn left_pad(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut padded = vec![1; rank - shape.len()];
    padded.extend_from_slice(shape);
    padded
}

/// Output shape and per-operand strides (0 on broadcast axes) for a
/// singleton-broadcast pair.
fn broadcast_layout(
    op: &'static str,
    lhs: &[usize],
    rhs: &[usize],
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let rank = lhs.len().max(rhs.len());
    let a = left_pad(lhs, rank);
    let b = left_pad(rhs, rank);
    let mut out = Vec::with_capacity(rank);
    for (&da, &db) in a.iter().zip(&b) {
        if da == db || db == 1 {
            out.push(da);
        } else if da == 1 {
            out.push(db);
        } else {
            return Err(Error::shape(op, lhs, rhs));
        }
    }
    let sa = row_major_strides(&a);
    let sb = row_major_strides(&b);
    let sa = sa
        .iter()
        .zip(&a)
        .map(|(&s, &d)| if d == 1 { 0 } else { s })
        .collect();
    let sb = sb
        .iter()
        .zip(&b)
        .map(|(&s, &d)| if d == 1 { 0 } else { s })
        .collect();
    Ok((out, sa, sb))
}

/// Componentwise `a op b` with singleton broadcasting.
pub fn elementwise<T: Element>(
    op: ElementwiseOp,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (shape, sa, sb) = broadcast_layout("elementwise", &a.shape, &b.shape)?;
    let rank = shape.len();
    let inner = shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let total: usize = shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut index = vec![0usize; rank - 1];
    let (ad, bd) = (&a.data, &b.data);
    for _ in 0..total / inner {
        let oa: usize = index.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ob: usize = index.iter().zip(&sb).map(|(i, s)| i * s).sum();
        match (ia, ib) {
            (1, 1) => out.extend(
                ad[oa..oa + inner]
                    .iter()
                    .zip(&bd[ob..ob + inner])
                    .map(|(&x, &y)| op.apply(x, y)),
            ),
            (1, 0) => {
                let y = bd[ob];
                out.extend(ad[oa..oa + inner].iter().map(|&x| op.apply(x, y)));
            }
            (0, 1) => {
                let x = ad[oa];
                out.extend(bd[ob..ob + inner].iter().map(|&y| op.apply(x, y)));
            }
            _ => {
                let v = op.apply(ad[oa], bd[ob]);
                out.extend(std::iter::repeat_n(v, inner));
            }
        }
        for axis in (0..rank - 1).rev() {
            index[axis] += 1;
            if index[axis] < shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

/// `n × n` lower-triangular mask: ones on and below the diagonal.
pub fn tril_mask<T: Element>(n: usize) -> Result<Tensor<T>> {
    Tensor::from_fn(
        [n, n],
        |i| if i % n <= i / n { T::one() } else { T::zero() },
    )
}

/// `c[m×n] = a[m×k] · b[k×n]`, accumulating each entry in ascending `k`.
fn gemm_rows<T: Element>(a: &[T], b: &[T], c: &mut [T], k: usize, n: usize) {
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&aik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (cij, &bkj) in c_row.iter_mut().zip(b_row) {
                *cij += aik * bkj;
            }
        }
    }
}

fn gemm<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let workers = threads().min(m);
    if workers <= 1 || m * k * n < 1 << 16 {
        gemm_rows(a, b, c, k, n);
        return;
    }
    let rows_per = m.div_ceil(workers);
    std::thread::scope(|scope| {
        for (a_chunk, c_chunk) in a.chunks(rows_per * k).zip(c.chunks_mut(rows_per * n)) {
            scope.spawn(move || gemm_rows(a_chunk, b, c_chunk, k, n));
        }
    });
}

impl<'a, T: Element> TensorView<'a, T> {
    /// Batched matrix product over the last two axes; leading axes are batch
    /// axes and broadcast when one side is a singleton.
    pub fn matmul(&self, rhs: &TensorView<'_, T>) -> Result<Tensor<T>> {
        let (ls, rs) = (&self.shape, &rhs.shape);
        if ls.len() < 2 || rs.len() < 2 {
            return Err(Error::shape("matmul", ls, rs));
        }
        let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (k2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", ls, rs));
        }
        let (batch, sa, sb) = broadcast_layout("matmul", &ls[..ls.len() - 2], &rs[..rs.len() - 2])
            .map_err(|_| Error::shape("matmul", ls, rs))?;
        let batches: usize = batch.iter().product();
        let mut out = vec![T::zero(); batches * m * n];
        let mut index = vec![0usize; batch.len()];
        for chunk in out.chunks_exact_mut(m * n) {
            let oa: usize = index.iter().zip(&sa).map(|(i, s)| i * s).sum::<usize>() * m * k;
            let ob: usize = index.iter().zip(&sb).map(|(i, s)| i * s).sum::<usize>() * k * n;
            gemm(
                &self.data[oa..oa + m * k],
                &rhs.data[ob..ob + k * n],
                chunk,
                m,
                k,
                n,
            );
            for axis in (0..batch.len()).rev() {
                index[axis] += 1;
                if index[axis] < batch[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        let mut shape = batch;
        shape.extend([m, n]);
        Ok(Tensor::from_parts(shape, out))
    }
}

impl<T: Element> Tensor<T> {
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.view().matmul(&rhs.view())
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        elementwise(ElementwiseOp::Add, self, rhs)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        elementwise(ElementwiseOp::Sub, self, rhs)
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        elementwise(ElementwiseOp::Mul, self, rhs)
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        elementwise(ElementwiseOp::Div, self, rhs)
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        self.map(|v| v * factor)
    }

    fn split_at_axis(&self, op: &'static str, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::InvalidShape(self.shape.clone(), op));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    /// Sums along `axis`, leaving it as a singleton. Each output is accumulated
    /// from index 0 upwards.
    pub fn reduce_sum(&self, axis: usize) -> Result<Tensor<T>> {
        let (outer, len, inner) = self.split_at_axis("reduce_sum axis out of range", axis)?;
        let mut out = vec![T::zero(); outer * inner];
        for (src, dst) in self
            .data
            .chunks_exact(len * inner)
            .zip(out.chunks_exact_mut(inner))
        {
            for lane in src.chunks_exact(inner) {
                for (d, &v) in dst.iter_mut().zip(lane) {
                    *d += v;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        Ok(Tensor::from_parts(shape, out))
    }

    /// Temperature softmax along `axis`, stabilised by subtracting the lane max.
    pub fn softmax(&self, axis: usize, temperature: f64) -> Result<Tensor<T>> {
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::InvalidTemperature(temperature));
        }
        let (outer, len, inner) = self.split_at_axis("softmax axis out of range", axis)?;
        let inv_t = T::from_f64(1.0 / temperature);
        let mut out = vec![T::zero(); self.data.len()];
        for o in 0..outer {
            let base = o * len * inner;
            for i in 0..inner {
                let at = |j: usize| base + j * inner + i;
                let max = (0..len)
                    .map(|j| self.data[at(j)])
                    .fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = ((self.data[at(j)] - max) * inv_t).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// Swaps two axes, materialising the permuted buffer.
    pub fn transpose(&self, a0: usize, a1: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if a0 >= rank || a1 >= rank {
            return Err(Error::InvalidShape(
                self.shape.clone(),
                "transpose axis out of range",
            ));
        }
        let mut shape = self.shape.clone();
        shape.swap(a0, a1);
        let mut src_strides = row_major_strides(&self.shape);
        src_strides.swap(a0, a1);
        let inner = shape[rank - 1];
        let inner_stride = src_strides[rank - 1];
        let mut out = Vec::with_capacity(self.data.len());
        let mut index = vec![0usize; rank - 1];
        for _ in 0..self.data.len() / inner {
            let base: usize = index.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            out.extend((0..inner).map(|j| self.data[base + j * inner_stride]));
            for axis in (0..rank - 1).rev() {
                index[axis] += 1;
                if index[axis] < shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        Ok(Tensor::from_parts(shape, out))
    }
}
