//! Channel-major real-valued image tensors.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane_len(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A C×H×W tensor of `f64` samples, row-major within each channel plane.
///
/// Stored images live nominally in `[0, 1]`; solver iterates are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    /// Wraps `data`, checking its length and that every sample is finite.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.channels == 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::param("shape", alloc::format!("empty shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::param(
                "data",
                alloc::format!("length {} does not match shape {shape}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Image { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Image {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Image {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for r in 0..shape.height {
                for q in 0..shape.width {
                    data.push(f(c, r, q));
                }
            }
        }
        Image { shape, data }
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Image { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, q: usize) -> f64 {
        self.data[(c * self.shape.height + r) * self.shape.width + q]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.shape.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.shape.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.shape.plane_len())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist_sq(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, mut f: impl FnMut(f64, f64) -> f64) -> Image {
        debug_assert_eq!(self.shape, other.shape);
        Image {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Image {
        self.map(|v| a * v)
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &Image) {
        debug_assert_eq!(self.shape, other.shape);
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn sub(&self, other: &Image) -> Image {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Image) -> Image {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }
}
