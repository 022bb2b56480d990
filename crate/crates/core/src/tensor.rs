//! Dense row-major tensors.
//!
//! Activations are laid out NHWC, convolution kernels `[kh, kw, in, out]`,
//! dense weights `[out, in]`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;

use crate::error::{shape_err, Result};

/// Floating-point element type. Training runs at `f32`; gradient checks and
/// conversion run at `f64`.
pub trait Real: Float + FromPrimitive + NumAssign + Default + Debug + Display + Sum + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::lit(rng.gen_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(n, h, w, c)` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(shape_err(op, format!("expected rank-4 NHWC, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [a, b] => Ok((a, b)),
            _ => Err(shape_err(op, format!("expected rank-2, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    /// Row-major flat offset of an NHWC coordinate.
    #[inline]
    pub fn idx4(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        let s = &self.shape;
        ((n * s[1] + h) * s[2] + w) * s[3] + c
    }

    #[inline]
    pub fn at4(&self, n: usize, h: usize, w: usize, c: usize) -> T {
        self.data[self.idx4(n, h, w, c)]
    }

    /// Sample `i` of the leading axis as a new tensor with leading dim 1.
    pub fn sample(&self, i: usize) -> Result<Self> {
        let n = *self.shape.first().ok_or_else(|| shape_err("sample", "rank 0"))?;
        if i >= n {
            return Err(shape_err("sample", format!("index {i} out of {n}")));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self {
            shape,
            data: self.data[i * per..(i + 1) * per].to_vec(),
        })
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| shape_err("stack", "no tensors"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.expect_same_shape(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Concatenate along the last axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let ra = a.rank();
        if ra == 0 || ra != b.rank() || a.shape[..ra - 1] != b.shape[..ra - 1] {
            return Err(shape_err(
                "concat",
                format!("{:?} and {:?} differ outside the channel axis", a.shape, b.shape),
            ));
        }
        let (ca, cb) = (a.shape[ra - 1], b.shape[ra - 1]);
        let rows = a.len() / ca;
        let mut data = Vec::with_capacity(a.len() + b.len());
        for r in 0..rows {
            data.extend_from_slice(&a.data[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&b.data[r * cb..(r + 1) * cb]);
        }
        let mut shape = a.shape.clone();
        shape[ra - 1] = ca + cb;
        Ok(Self { shape, data })
    }

    /// Split along the last axis at `at`; inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, at: usize) -> Result<(Self, Self)> {
        let r = self.rank();
        let c = *self.shape.last().ok_or_else(|| shape_err("split", "rank 0"))?;
        if at == 0 || at >= c {
            return Err(shape_err("split", format!("split point {at} outside 1..{c}")));
        }
        let rows = self.len() / c;
        let mut a = Vec::with_capacity(rows * at);
        let mut b = Vec::with_capacity(rows * (c - at));
        for row in self.data.chunks_exact(c) {
            a.extend_from_slice(&row[..at]);
            b.extend_from_slice(&row[at..]);
        }
        let mut sa = self.shape.clone();
        sa[r - 1] = at;
        let mut sb = self.shape.clone();
        sb[r - 1] = c - at;
        Ok((Self { shape: sa, data: a }, Self { shape: sb, data: b }))
    }

    /// Multiply every row (last axis) elementwise by `v`.
    pub fn mul_channels(&self, v: &[T]) -> Result<Self> {
        let c = *self.shape.last().ok_or_else(|| shape_err("mul_channels", "rank 0"))?;
        if v.len() != c {
            return Err(shape_err(
                "mul_channels",
                format!("{} factors for {c} channels", v.len()),
            ));
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            for (x, &s) in row.iter_mut().zip(v) {
                *x *= s;
            }
        }
        Ok(out)
    }
}

/// Largest `|a-b| / max(|a|,|b|,floor)` over two equally-shaped tensors.
pub fn max_rel_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
