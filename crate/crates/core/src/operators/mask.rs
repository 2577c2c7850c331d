use alloc::format;
use alloc::vec::Vec;

use crate::error::{ensure_shape, Error, Result};
use crate::image::{Image, Shape};
use crate::rng::{self, Purpose};

/// Pixel-wise observation mask shared across channels; unobserved samples read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    shape: Shape,
    keep: Vec<bool>,
}

impl PixelMask {
    /// `keep` is a row-major `height x width` map.
    pub fn new(shape: Shape, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != shape.plane_len() {
            return Err(Error::param(
                "mask",
                format!("{} entries for a {}x{} image", keep.len(), shape.height, shape.width),
            ));
        }
        Ok(PixelMask { shape, keep })
    }

    /// Keeps each pixel independently with probability `fraction`.
    pub fn random(shape: Shape, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::param("keep", format!("{fraction} is outside [0, 1]")));
        }
        let draws = rng::uniform_vec(seed, Purpose::Mask, 0, shape.plane_len());
        Self::new(shape, draws.into_iter().map(|u| u < fraction).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn observed(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        ensure_shape(self.shape, x.shape())?;
        let n = self.shape.plane_len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if !self.keep[i % n] {
                *v = 0.0;
            }
        }
        Ok(out)
    }
}
