//! Dense row-major `f64` tensors of rank 1 to 3.
//!
//! The free functions here are the forward kernels; [`crate::autodiff::Tape`]
//! calls them and records what it needs for the backward pass.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const MAX_RANK: usize = 3;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: format!("rank must be between 1 and {MAX_RANK}"),
        });
    }
    if shape.contains(&0) {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                shape: shape.to_vec(),
                reason: format!("expected {n} values, got {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        check_shape(shape)?;
        let n = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape {
                shape: vec![r, c],
                reason: "ragged rows".into(),
            });
        }
        Self::new(&[r, c], rows.concat())
    }

    pub fn random_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Result<Self> {
        check_shape(shape)?;
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform_range(lo, hi)).collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn random_normal(shape: &[usize], rng: &mut SeededRng) -> Result<Self> {
        check_shape(shape)?;
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.normal()).collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, b: usize, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(b * self.shape[1] + i) * self.shape[2] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn set3(&mut self, b: usize, i: usize, j: usize, v: f64) {
        let (r, c) = (self.shape[1], self.shape[2]);
        self.data[(b * r + i) * c + j] = v;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        Ok(self
            .zip_map(other, "max_abs_diff", |a, b| (a - b).abs())?
            .data
            .into_iter()
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rank-3 view of a rank-2 tensor (`[1, r, c]`); rank-3 passes through.
    pub fn as_batched(&self) -> Result<Self> {
        match self.rank() {
            2 => self.reshape(&[1, self.shape[0], self.shape[1]]),
            3 => Ok(self.clone()),
            r => Err(Error::Rank {
                op: "as_batched",
                got: r,
                expected: "rank 2 or 3",
            }),
        }
    }

    /// Sample `b` of a rank-3 tensor as a rank-2 matrix.
    pub fn sample(&self, b: usize) -> Result<Self> {
        if self.rank() != 3 || b >= self.shape[0] {
            return Err(Error::Contract(format!("sample {b} of tensor shaped {:?}", self.shape)));
        }
        let (r, c) = (self.shape[1], self.shape[2]);
        Self::new(&[r, c], self.data[b * r * c..(b + 1) * r * c].to_vec())
    }

    /// Stacks equally-shaped rank-2 matrices into a rank-3 batch.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        if first.rank() != 2 {
            return Err(Error::Rank {
                op: "stack",
                got: first.rank(),
                expected: "rank 2",
            });
        }
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        Self::new(&[items.len(), first.shape[0], first.shape[1]], data)
    }
}

/// Left-pads a shape with ones to rank 3.
pub(crate) fn pad3(shape: &[usize]) -> [usize; 3] {
    let mut out = [1; 3];
    let off = 3 - shape.len();
    out[off..].copy_from_slice(shape);
    out
}

/// Checks that `b` broadcasts onto `a` (numpy rules, with the output shape fixed to `a`).
pub(crate) fn check_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if b.len() > a.len() {
        return Err(Error::dim(op, a, b));
    }
    let (pa, pb) = (pad3(a), pad3(b));
    for d in 0..3 {
        if pb[d] != pa[d] && pb[d] != 1 {
            return Err(Error::dim(op, a, b));
        }
    }
    Ok(())
}

/// For every flat index of `out`, the flat index of the broadcast operand.
pub(crate) fn broadcast_map(out: &[usize], b: &[usize]) -> Vec<usize> {
    let (po, pb) = (pad3(out), pad3(b));
    let strides = [
        if pb[0] == 1 { 0 } else { pb[1] * pb[2] },
        if pb[1] == 1 { 0 } else { pb[2] },
        if pb[2] == 1 { 0 } else { 1 },
    ];
    let mut idx = Vec::with_capacity(po.iter().product());
    for i in 0..po[0] {
        for j in 0..po[1] {
            for k in 0..po[2] {
                idx.push(i * strides[0] + j * strides[1] + k * strides[2]);
            }
        }
    }
    idx
}

fn broadcast_zip(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    check_broadcast(op, &a.shape, &b.shape)?;
    if a.shape == b.shape {
        return a.zip_map(b, op, f);
    }
    let map = broadcast_map(&a.shape, &b.shape);
    let data = a.data.iter().zip(map).map(|(&x, j)| f(x, b.data[j])).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Elementwise `a + b` with `b` broadcast to `a`'s shape.
pub fn add_broadcast(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_zip("add", a, b, |x, y| x + y)
}

pub fn sub_broadcast(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_zip("sub", a, b, |x, y| x - y)
}

pub fn mul_broadcast(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_zip("mul", a, b, |x, y| x * y)
}

pub fn div_broadcast(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_zip("div", a, b, |x, y| x / y)
}

/// Materialises `a` broadcast to `shape`.
pub fn expand(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    check_shape(shape)?;
    check_broadcast("expand", shape, &a.shape)?;
    let data = broadcast_map(shape, &a.shape).into_iter().map(|j| a.data[j]).collect();
    Ok(Tensor {
        shape: shape.to_vec(),
        data,
    })
}

/// Sums `g` over the axes along which `shape` was broadcast to produce it.
pub fn reduce_to_shape(g: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if g.shape == shape {
        return Ok(g.clone());
    }
    check_broadcast("reduce_to_shape", &g.shape, shape)?;
    let mut out = Tensor::zeros(shape)?;
    for (v, j) in g.data.iter().zip(broadcast_map(&g.shape, shape)) {
        out.data[j] += *v;
    }
    Ok(out)
}

fn transpose_block(src: &[f64], rows: usize, cols: usize, dst: &mut Vec<f64>) {
    for j in 0..cols {
        for i in 0..rows {
            dst.push(src[i * cols + j]);
        }
    }
}

/// Swaps the trailing two axes.
pub fn transpose(a: &Tensor) -> Result<Tensor> {
    match a.rank() {
        2 => {
            let (r, c) = (a.shape[0], a.shape[1]);
            let mut data = Vec::with_capacity(a.len());
            transpose_block(&a.data, r, c, &mut data);
            Ok(Tensor {
                shape: vec![c, r],
                data,
            })
        }
        3 => {
            let (b, r, c) = (a.shape[0], a.shape[1], a.shape[2]);
            let mut data = Vec::with_capacity(a.len());
            for s in 0..b {
                transpose_block(&a.data[s * r * c..(s + 1) * r * c], r, c, &mut data);
            }
            Ok(Tensor {
                shape: vec![b, c, r],
                data,
            })
        }
        got => Err(Error::Rank {
            op: "transpose",
            got,
            expected: "rank 2 or 3",
        }),
    }
}

fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Matrix product over the trailing two axes. A rank-2 operand is shared
/// across the batch of a rank-3 operand.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    for t in [a, b] {
        if t.rank() < 2 {
            return Err(Error::Rank {
                op: "matmul",
                got: t.rank(),
                expected: "rank 2 or 3",
            });
        }
    }
    let (ba, m, k) = if a.rank() == 3 {
        (Some(a.shape[0]), a.shape[1], a.shape[2])
    } else {
        (None, a.shape[0], a.shape[1])
    };
    let (bb, k2, n) = if b.rank() == 3 {
        (Some(b.shape[0]), b.shape[1], b.shape[2])
    } else {
        (None, b.shape[0], b.shape[1])
    };
    if k != k2 {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    let batch = match (ba, bb) {
        (Some(x), Some(y)) if x != y => return Err(Error::dim("matmul", &a.shape, &b.shape)),
        (Some(x), _) | (None, Some(x)) => Some(x),
        (None, None) => None,
    };
    let nb = batch.unwrap_or(1);
    let mut data = vec![0.0; nb * m * n];
    for s in 0..nb {
        let asl = if ba.is_some() {
            &a.data[s * m * k..(s + 1) * m * k]
        } else {
            &a.data[..]
        };
        let bsl = if bb.is_some() {
            &b.data[s * k * n..(s + 1) * k * n]
        } else {
            &b.data[..]
        };
        gemm(asl, bsl, m, k, n, &mut data[s * m * n..(s + 1) * m * n]);
    }
    let shape = match batch {
        Some(x) => vec![x, m, n],
        None => vec![m, n],
    };
    Ok(Tensor { shape, data })
}

/// Sums a rank-3 tensor over its leading axis.
pub(crate) fn sum_batch(t: &Tensor) -> Tensor {
    debug_assert_eq!(t.rank(), 3);
    let n = t.shape[1] * t.shape[2];
    let mut data = vec![0.0; n];
    for chunk in t.data.chunks(n) {
        for (o, v) in data.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor {
        shape: t.shape[1..].to_vec(),
        data,
    }
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Whether stochastic layers sample (train) or pass through (eval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter {
            name: "dropout".into(),
            reason: format!("rate must lie in [0, 1), got {rate}"),
        });
    }
    Ok(())
}

/// Inverted-dropout mask: zeros with probability `rate`, survivors `1/(1-rate)`.
pub(crate) fn dropout_mask(shape: &[usize], rate: f64, rng: &mut SeededRng) -> Result<Tensor> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
    Tensor::new(shape, data)
}

pub fn dropout(a: &Tensor, rate: f64, mode: Mode, rng: &mut SeededRng) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(a.clone());
    }
    let mask = dropout_mask(&a.shape, rate, rng)?;
    a.zip_map(&mask, "dropout", |x, m| x * m)
}

/// Mean over `axes`, keeping reduced axes with extent 1.
pub fn mean_axes(a: &Tensor, axes: &[usize]) -> Result<Tensor> {
    if axes.iter().any(|&ax| ax >= a.rank()) {
        return Err(Error::Rank {
            op: "mean_axes",
            got: a.rank(),
            expected: "axes within rank",
        });
    }
    let shape: Vec<usize> = a
        .shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect();
    let mut out = reduce_to_shape(a, &shape)?;
    let count = (a.len() / out.len()) as f64;
    out.data.iter_mut().for_each(|v| *v /= count);
    Ok(out)
}

/// Concatenation along the last axis; leading extents must agree.
pub fn concat_last(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra != rb || a.shape[..ra - 1] != b.shape[..rb - 1] {
        return Err(Error::dim("concat", &a.shape, &b.shape));
    }
    let (ca, cb) = (a.shape[ra - 1], b.shape[rb - 1]);
    let rows = a.len() / ca;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for r in 0..rows {
        data.extend_from_slice(&a.data[r * ca..(r + 1) * ca]);
        data.extend_from_slice(&b.data[r * cb..(r + 1) * cb]);
    }
    let mut shape = a.shape.clone();
    shape[ra - 1] = ca + cb;
    Ok(Tensor { shape, data })
}

/// Columns `[start, end)` of the last axis.
pub fn slice_last(a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let r = a.rank();
    let c = a.shape[r - 1];
    if start >= end || end > c {
        return Err(Error::Shape {
            shape: a.shape.clone(),
            reason: format!("cannot slice last axis to {start}..{end}"),
        });
    }
    let rows = a.len() / c;
    let mut data = Vec::with_capacity(rows * (end - start));
    for row in 0..rows {
        data.extend_from_slice(&a.data[row * c + start..row * c + end]);
    }
    let mut shape = a.shape.clone();
    shape[r - 1] = end - start;
    Ok(Tensor { shape, data })
}

/// Writes `src` into columns `[start, start + src_cols)` of `dst`'s last axis.
pub(crate) fn scatter_last(dst: &mut Tensor, src: &Tensor, start: usize) {
    let c = *dst.shape.last().unwrap();
    let sc = *src.shape.last().unwrap();
    let rows = dst.len() / c;
    for row in 0..rows {
        for j in 0..sc {
            dst.data[row * c + start + j] += src.data[row * sc + j];
        }
    }
}
