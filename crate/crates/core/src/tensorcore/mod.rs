//! Dense 4-D tensors and the differentiable primitives the network is built from.
//!
//! Every primitive comes as a `forward`/`backward` pair of plain functions. The
//! backward functions take whatever the forward pass saved and return the
//! gradients of all inputs; nothing is hidden in global state.

mod activation;
mod conv;
pub mod gradcheck;
mod norm;
mod pad;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

use crate::error::{Error, Result};

pub use activation::{prelu, prelu_backward, sigmoid, sigmoid_backward};
pub use conv::{conv2d, conv2d_backward, rot180_grad_to_free, tie_rot180};
pub use gradcheck::{check_gradients, GradReport};
pub use norm::{
    batch_norm, batch_norm_backward, BatchNorm, BatchNormCache, BatchNormOutput, RunningUpdate,
};
pub use pad::{reflect_pad, reflect_pad_backward};

/// Floating-point element type. Training and inference use `f32`; the
/// gradient checker and the oracles use `f64`.
pub trait Scalar: Float + NumAssign + Sum + Default + Send + Sync + fmt::Debug + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Batch-norm behaviour: batch statistics (and running-stat updates) or frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// (batch, channels, height, width)
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims4 { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Display for Dims4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major (width fastest) 4-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: Dims4) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: Dims4, value: T) -> Self {
        assert!(
            dims.n > 0 && dims.c > 0 && dims.h > 0 && dims.w > 0,
            "all tensor dims must be >= 1, got {dims}"
        );
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims4, data: Vec<T>) -> Result<Self> {
        if dims.n == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0 {
            return Err(Error::invalid(format!(
                "all tensor dims must be >= 1, got {dims}"
            )));
        }
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "buffer of length {} does not match dims {dims}",
                data.len()
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn from_fn(dims: Dims4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.n {
            for c in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(b, c, y, x)]
    }

    /// One (batch, channel) plane.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.dims.plane();
        let start = (b * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_dims(other)?;
        Ok(Tensor4 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_dims(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shapes(self.dims, other.dims));
        }
        Ok(())
    }

    /// Batch item `b` as a standalone 1-item tensor.
    pub fn item(&self, b: usize) -> Self {
        let len = self.dims.c * self.dims.plane();
        Tensor4 {
            dims: Dims4::new(1, self.dims.c, self.dims.h, self.dims.w),
            data: self.data[b * len..(b + 1) * len].to_vec(),
        }
    }

    /// Concatenates equally shaped tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let d = first.dims;
        let mut data = Vec::with_capacity(d.len() * items.len());
        let mut n = 0;
        for t in items {
            if (t.dims.c, t.dims.h, t.dims.w) != (d.c, d.h, d.w) {
                return Err(Error::shapes(d, t.dims));
            }
            n += t.dims.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 {
            dims: Dims4::new(n, d.c, d.h, d.w),
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// 3x3 convolution weights, shape (out_channels, in_channels, 3, 3). There is no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel<T> {
    out_channels: usize,
    in_channels: usize,
    weights: Vec<T>,
}

impl<T: Scalar> Kernel<T> {
    pub const SIZE: usize = 3;
    pub const TAPS: usize = 9;

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Kernel {
            out_channels,
            in_channels,
            weights: vec![T::zero(); out_channels * in_channels * Self::TAPS],
        }
    }

    pub fn from_vec(out_channels: usize, in_channels: usize, weights: Vec<T>) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::invalid("kernel channel counts must be >= 1"));
        }
        if weights.len() != out_channels * in_channels * Self::TAPS {
            return Err(Error::invalid(format!(
                "kernel ({out_channels},{in_channels},3,3) needs {} weights, got {}",
                out_channels * in_channels * Self::TAPS,
                weights.len()
            )));
        }
        Ok(Kernel {
            out_channels,
            in_channels,
            weights,
        })
    }

    /// Same 3x3 spatial kernel for a single input and output channel.
    pub fn single(taps: [[f64; 3]; 3]) -> Self {
        let weights = taps.iter().flatten().map(|&v| T::of(v)).collect();
        Kernel {
            out_channels: 1,
            in_channels: 1,
            weights,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    /// The nine taps of the (out, in) slice, row-major.
    #[inline]
    pub fn slice(&self, out: usize, inp: usize) -> &[T] {
        let start = (out * self.in_channels + inp) * Self::TAPS;
        &self.weights[start..start + Self::TAPS]
    }

    #[inline]
    pub fn at(&self, out: usize, inp: usize, y: usize, x: usize) -> T {
        self.weights[(out * self.in_channels + inp) * Self::TAPS + y * 3 + x]
    }

    pub fn cast<U: Scalar>(&self) -> Kernel<U> {
        Kernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            weights: self.weights.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Records saved by forward passes, consumed in reverse order by the backward pass.
#[derive(Debug)]
pub struct GradTape<R> {
    records: Vec<R>,
}

impl<R> Default for GradTape<R> {
    fn default() -> Self {
        GradTape {
            records: Vec::new(),
        }
    }
}

impl<R> GradTape<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: R) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Hands every record to `visit` exactly once, last recorded first.
    pub fn replay<E>(
        self,
        mut visit: impl FnMut(R) -> std::result::Result<(), E>,
    ) -> std::result::Result<(), E> {
        for record in self.records.into_iter().rev() {
            visit(record)?;
        }
        Ok(())
    }
}
