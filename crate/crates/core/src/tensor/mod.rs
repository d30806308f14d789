//! Dense batched NCHW tensor and the numeric primitives the guidance stack
//! is built from.
//!
//! Storage is row-major with the batch outermost:
//! `index = ((b * c + ch) * h + y) * w + x`.

mod filter;
mod io;
mod ops;
mod stats;

pub use filter::{gaussian_blur, reflect_index, sobel_magnitude, GaussianKernel};
pub use io::{read_tensor, tensor_from_le_bytes, tensor_to_le_bytes, write_tensor, Sidecar};
pub use ops::{
    add_scaled, dot_per_sample, energy_per_sample, l2_distance, mean_per_sample, std_per_sample,
};
pub use stats::{quantile_per_sample, quantile_sorted};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar storage type of a [`Tensor4`].
///
/// Reductions always accumulate in `f64` regardless of the storage type.
pub trait Element: Copy + Default + PartialEq + PartialOrd + fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Batch, channel, row and column counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 4]", into = "[usize; 4]")]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let dims = [n, c, h, w];
        if dims.contains(&0) {
            return Err(Error::InvalidShape {
                dims,
                reason: "all dimensions must be at least 1".into(),
            });
        }
        n.checked_mul(c)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::InvalidShape {
                dims,
                reason: "element count overflows".into(),
            })?;
        Ok(Self { n, c, h, w })
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements per batch entry.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Elements per channel plane.
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn with_channels(&self, c: usize) -> Self {
        Self { c, ..*self }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, b: usize, ch: usize, y: usize, x: usize) -> usize {
        ((b * self.c + ch) * self.h + y) * self.w + x
    }
}

impl TryFrom<[usize; 4]> for Shape4 {
    type Error = Error;

    fn try_from(d: [usize; 4]) -> Result<Self> {
        Shape4::new(d[0], d[1], d[2], d[3])
    }
}

impl From<Shape4> for [usize; 4] {
    fn from(s: Shape4) -> Self {
        s.dims()
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4D tensor, `f32` storage unless stated otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Element> Tensor4<T> {
    pub fn new(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DataLength {
                len: data.len(),
                shape,
                expected: shape.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, T::from_f64(0.0))
    }

    pub fn ones(shape: Shape4) -> Self {
        Self::full(shape, T::from_f64(1.0))
    }

    /// Builds a tensor from `f(b, ch, y, x)`.
    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.n {
            for ch in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
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

    pub fn get(&self, b: usize, ch: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(b, ch, y, x)]
    }

    pub fn set(&mut self, b: usize, ch: usize, y: usize, x: usize, v: T) {
        let i = self.shape.index(b, ch, y, x);
        self.data[i] = v;
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[b * len..(b + 1) * len]
    }

    pub fn samples(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.shape.sample_len())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map<U: Element, R: Element>(
        &self,
        other: &Tensor4<U>,
        f: impl Fn(T, U) -> R,
    ) -> Result<Tensor4<R>> {
        ensure_same_shape(self.shape, other.shape())?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(other.data())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Converts the storage type, rounding to nearest.
    pub fn cast<U: Element>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| T::from_f64(v.to_f64() * k))
    }

    /// First non-finite element, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.to_f64().is_finite()) {
            Some(index) => Err(Error::NonFinite {
                index,
                value: self.data[index].to_f64(),
            }),
            None => Ok(()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }
}

pub(crate) fn ensure_same_shape(left: Shape4, right: Shape4) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { left, right })
    }
}
