//! Dense row-major `f64` tensors.
//!
//! Tensors are immutable values: every operation returns a new tensor.
//! Broadcasting in [`ew`] is limited to three cases:
//!
//! - equal shapes,
//! - `b` of shape `(C)` against `a` of shape `(N, C, ...)` (channel axis 1),
//! - `b` of shape `(N, C)` against `a` of shape `(N, C, H, W)`.

mod io;
mod rng;

pub use io::{parse_named, parse_tensor, write_named, write_tensor};
pub use rng::{derive_seed, Rng};

use crate::error::{shape_err, Result};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return shape_err(format!("extent of axis {axis} is zero in {dims:?}"));
        }
        Ok(Shape(dims.to_vec()))
    }

    /// Rank-0 shape holding a single element.
    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Initial contents for [`Tensor::create`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fill {
    Zeros,
    Ones,
    Value(f64),
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return shape_err(format!(
                "{} values do not fill shape {shape}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_shape(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![v],
        }
    }

    pub fn create(fill: Fill, dims: &[usize], rng: &mut Rng) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        let data = match fill {
            Fill::Zeros => vec![0.0; n],
            Fill::Ones => vec![1.0; n],
            Fill::Value(v) => vec![v; n],
            Fill::Normal { mean, std } => {
                if !(std >= 0.0) {
                    return shape_err(format!("normal std must be >= 0, got {std}"));
                }
                (0..n).map(|_| mean + std * rng.standard_normal()).collect()
            }
            Fill::Uniform { lo, hi } => {
                if !(lo <= hi) {
                    return shape_err(format!("uniform bounds out of order: {lo} > {hi}"));
                }
                (0..n).map(|_| lo + (hi - lo) * rng.unit()).collect()
            }
        };
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 1.0)
    }

    pub fn full(dims: &[usize], v: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![v; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return shape_err(format!("zip of {} and {}", self.shape, other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return shape_err(format!("compare {} with {}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let strides = self.shape.strides();
        let flat: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[flat]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

impl EwOp {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            EwOp::Add => a + b,
            EwOp::Sub => a - b,
            EwOp::Mul => a * b,
            EwOp::Div => a / b,
            // NaN in either operand propagates.
            EwOp::Max => {
                if a.is_nan() || b.is_nan() {
                    f64::NAN
                } else if a >= b {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// How `b` maps onto `a` in a broadcast elementwise op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    Same,
    /// `b` is `(C)` against axis 1 of `a`; `inner` is the product of the
    /// extents after axis 1.
    Channel { channels: usize, inner: usize },
    /// `b` is `(N, C)` against the first two axes of `a`.
    Leading { inner: usize },
}

impl Broadcast {
    pub fn resolve(a: &Shape, b: &Shape) -> Result<Broadcast> {
        if a == b {
            return Ok(Broadcast::Same);
        }
        let ad = a.dims();
        let bd = b.dims();
        if bd.len() == 1 && ad.len() >= 2 && ad[1] == bd[0] {
            return Ok(Broadcast::Channel {
                channels: bd[0],
                inner: ad[2..].iter().product(),
            });
        }
        if bd.len() == 2 && ad.len() >= 3 && ad[..2] == bd[..] {
            return Ok(Broadcast::Leading {
                inner: ad[2..].iter().product(),
            });
        }
        shape_err(format!("cannot broadcast {b} onto {a}"))
    }

    #[inline]
    pub fn index(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Channel { channels, inner } => (i / inner) % channels,
            Broadcast::Leading { inner } => i / inner,
        }
    }
}

/// Elementwise `a op b` with the limited broadcasting described in the module docs.
pub fn ew(op: EwOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let bc = Broadcast::resolve(&a.shape, &b.shape)?;
    let data = match bc {
        Broadcast::Same => a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.apply(x, y))
            .collect(),
        _ => a
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| op.apply(x, b.data[bc.index(i)]))
            .collect(),
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Sums `g` (shaped like the broadcast output) down to the shape of `b`.
pub fn reduce_broadcast(g: &Tensor, b: &Shape) -> Result<Tensor> {
    let bc = Broadcast::resolve(&g.shape, b)?;
    if bc == Broadcast::Same {
        return Ok(g.clone());
    }
    let mut out = vec![0.0; b.numel()];
    for (i, &v) in g.data.iter().enumerate() {
        out[bc.index(i)] += v;
    }
    Ok(Tensor::from_shape(b.clone(), out))
}

/// Row-major `(M,K)·(K,N)`. Each output row depends only on the matching
/// row of `a`, so results are independent of how many rows are stacked.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ad, bd) = (a.dims(), b.dims());
    if ad.len() != 2 || bd.len() != 2 || ad[1] != bd[0] {
        return shape_err(format!("matmul of {} and {}", a.shape, b.shape));
    }
    let (m, k, n) = (ad[0], ad[1], bd[1]);
    let mut out = vec![0.0; m * n];
    gemm_rows(&a.data, &b.data, &mut out, m, k, n);
    Ok(Tensor::from_shape(Shape(vec![m, n]), out))
}

/// `out[m,n] += a[m,k] * b[k,n]`, all row-major.
pub(crate) fn gemm_rows(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Mean,
    /// Population variance (divide by the element count).
    Var,
    Sum,
}

fn check_axes(shape: &Shape, axes: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; shape.rank()];
    for &ax in axes {
        if ax >= shape.rank() {
            return shape_err(format!("axis {ax} out of range for {shape}"));
        }
        if mask[ax] {
            return shape_err(format!("axis {ax} repeated"));
        }
        mask[ax] = true;
    }
    Ok(mask)
}

/// Maps every flat index of a tensor onto the flat index of its reduction
/// over the masked axes.
pub(crate) struct ReduceMap {
    out_shape: Shape,
    /// Stride into the reduced tensor for each input axis (0 where reduced).
    out_strides: Vec<usize>,
    dims: Vec<usize>,
    pub(crate) count: usize,
}

impl ReduceMap {
    pub(crate) fn new(shape: &Shape, axes: &[usize]) -> Result<Self> {
        let mask = check_axes(shape, axes)?;
        let kept: Vec<usize> = shape
            .dims()
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| !m)
            .map(|(&d, _)| d)
            .collect();
        let out_shape = Shape(kept);
        let kept_strides = out_shape.strides();
        let mut out_strides = vec![0; shape.rank()];
        let mut j = 0;
        for (ax, &m) in mask.iter().enumerate() {
            if !m {
                out_strides[ax] = kept_strides[j];
                j += 1;
            }
        }
        let count = shape
            .dims()
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d)
            .product();
        Ok(ReduceMap {
            out_shape,
            out_strides,
            dims: shape.dims().to_vec(),
            count,
        })
    }

    /// Calls `f(input_index, output_index)` in row-major input order.
    pub(crate) fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let rank = self.dims.len();
        let total: usize = self.dims.iter().product();
        let mut idx = vec![0usize; rank];
        let mut out = 0usize;
        for i in 0..total {
            f(i, out);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                out += self.out_strides[ax];
                if idx[ax] < self.dims[ax] {
                    break;
                }
                out -= self.out_strides[ax] * self.dims[ax];
                idx[ax] = 0;
            }
        }
    }

    /// Expands a reduced tensor back to the full shape.
    pub(crate) fn expand(&self, reduced: &Tensor) -> Tensor {
        let mut data = Vec::with_capacity(self.dims.iter().product());
        self.for_each(|_, o| data.push(reduced.data[o]));
        Tensor::from_shape(Shape(self.dims.clone()), data)
    }
}

/// Reduces over `axes`; the result drops those axes. Accumulation runs in
/// row-major order, so the result is deterministic.
pub fn reduce(op: ReduceOp, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let map = ReduceMap::new(&x.shape, axes)?;
    let mut sums = vec![0.0; map.out_shape.numel()];
    map.for_each(|i, o| sums[o] += x.data[i]);
    let count = map.count as f64;
    let data = match op {
        ReduceOp::Sum => sums,
        ReduceOp::Mean => sums.into_iter().map(|s| s / count).collect(),
        ReduceOp::Var => {
            let mean: Vec<f64> = sums.into_iter().map(|s| s / count).collect();
            let mut sq = vec![0.0; mean.len()];
            map.for_each(|i, o| {
                let d = x.data[i] - mean[o];
                sq[o] += d * d;
            });
            sq.into_iter().map(|s| s / count).collect()
        }
    };
    Ok(Tensor::from_shape(map.out_shape, data))
}

pub fn reshape(x: &Tensor, dims: &[usize]) -> Result<Tensor> {
    let shape = Shape::new(dims)?;
    if shape.numel() != x.numel() {
        return shape_err(format!("cannot reshape {} to {shape}", x.shape));
    }
    Ok(Tensor {
        shape,
        data: x.data.clone(),
    })
}

/// Output axis `i` is input axis `perm[i]`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = x.shape.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return shape_err(format!("{perm:?} is not a permutation of rank {rank}"));
    }
    let in_strides = x.shape.strides();
    let out_dims: Vec<usize> = perm.iter().map(|&p| x.dims()[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut data = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..x.numel() {
        data.push(x.data[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            src -= strides[ax] * out_dims[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor {
        shape: Shape(out_dims),
        data,
    })
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Slice `start..start+len` along `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let dims = x.dims();
    if axis >= dims.len() || len == 0 || start + len > dims[axis] {
        return shape_err(format!(
            "narrow({axis}, {start}, {len}) out of range for {}",
            x.shape
        ));
    }
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * dims[axis] * inner;
        data.extend_from_slice(&x.data[base + start * inner..base + (start + len) * inner]);
    }
    let mut out_dims = dims.to_vec();
    out_dims[axis] = len;
    Ok(Tensor {
        shape: Shape(out_dims),
        data,
    })
}

/// Inverse of [`narrow`]: places `g` into a zero tensor of shape `full`.
pub(crate) fn unnarrow(g: &Tensor, full: &Shape, axis: usize, start: usize) -> Tensor {
    let dims = full.dims();
    let len = g.dims()[axis];
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut data = vec![0.0; full.numel()];
    for o in 0..outer {
        let dst = o * dims[axis] * inner + start * inner;
        let src = o * len * inner;
        data[dst..dst + len * inner].copy_from_slice(&g.data[src..src + len * inner]);
    }
    Tensor::from_shape(full.clone(), data)
}

/// Stacks tensors of equal shape `(1, ...)` or `(k, ...)` along axis 0.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    let first = match parts.first() {
        Some(t) => t,
        None => return shape_err("concat of zero tensors"),
    };
    let tail = &first.dims()[1..];
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.shape.rank() == 0 || &p.dims()[1..] != tail {
            return shape_err(format!("concat of {} onto {}", p.shape, first.shape));
        }
        rows += p.dims()[0];
        data.extend_from_slice(&p.data);
    }
    let mut dims = vec![rows];
    dims.extend_from_slice(tail);
    Tensor::from_vec(&dims, data)
}
