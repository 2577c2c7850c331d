//! Degradation models `y = A x + n`, their adjoints, and the measurement simulator.

mod blur;
mod kernel;
mod mask;
mod resample;

pub use blur::CircularBlur;
pub use kernel::{gaussian_kernel, motion_kernel, Kernel};
pub use mask::PixelMask;
pub use resample::{cubic, BicubicDownsample, Decimator};

use alloc::format;

use crate::error::{ensure_shape, Error, Result};
use crate::image::{Image, Shape};
use crate::rng::{self, Purpose};

/// A linear degradation `A` together with its exact adjoint.
#[derive(Debug, Clone)]
pub enum ForwardOperator {
    Identity(Shape),
    Blur(CircularBlur),
    Downsample(BicubicDownsample),
    Mask(PixelMask),
}

impl ForwardOperator {
    pub fn identity(shape: Shape) -> Self {
        ForwardOperator::Identity(shape)
    }

    pub fn blur(kernel: Kernel, shape: Shape) -> Self {
        ForwardOperator::Blur(CircularBlur::new(kernel, shape))
    }

    pub fn downsample(scale: usize, input: Shape) -> Result<Self> {
        Ok(ForwardOperator::Downsample(BicubicDownsample::new(scale, input)?))
    }

    pub fn mask(mask: PixelMask) -> Self {
        ForwardOperator::Mask(mask)
    }

    pub fn input_shape(&self) -> Shape {
        match self {
            ForwardOperator::Identity(s) => *s,
            ForwardOperator::Blur(b) => b.shape(),
            ForwardOperator::Downsample(d) => d.input_shape(),
            ForwardOperator::Mask(m) => m.shape(),
        }
    }

    pub fn output_shape(&self) -> Shape {
        match self {
            ForwardOperator::Downsample(d) => d.output_shape(),
            other => other.input_shape(),
        }
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        match self {
            ForwardOperator::Identity(s) => {
                ensure_shape(*s, x.shape())?;
                Ok(x.clone())
            }
            ForwardOperator::Blur(b) => b.apply(x),
            ForwardOperator::Downsample(d) => d.apply(x),
            ForwardOperator::Mask(m) => m.apply(x),
        }
    }

    pub fn adjoint(&self, v: &Image) -> Result<Image> {
        match self {
            ForwardOperator::Identity(s) => {
                ensure_shape(*s, v.shape())?;
                Ok(v.clone())
            }
            ForwardOperator::Blur(b) => b.adjoint(v),
            ForwardOperator::Downsample(d) => d.adjoint(v),
            ForwardOperator::Mask(m) => m.apply(v),
        }
    }

    /// Gradient of `||y - A z||^2`, i.e. `2 A^T (A z - y)`.
    pub fn data_gradient(&self, z: &Image, y: &Image) -> Result<Image> {
        let resid = self.apply(z)?.sub(y);
        Ok(self.adjoint(&resid)?.scaled(2.0))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ForwardOperator::Identity(_) => "identity",
            ForwardOperator::Blur(_) => "blur",
            ForwardOperator::Downsample(_) => "sr_bicubic",
            ForwardOperator::Mask(_) => "mask",
        }
    }
}

/// Simulates a measurement `A x + sigma_n * g` with unit Gaussian `g` drawn from `seed`.
pub fn degrade(op: &ForwardOperator, x: &Image, sigma_n: f64, seed: u64) -> Result<Image> {
    if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
        return Err(Error::param("sigma_n", format!("{sigma_n} must be non-negative")));
    }
    let mut y = op.apply(x)?;
    if sigma_n > 0.0 {
        let noise = rng::gaussian_image(seed, Purpose::Measurement, 0, y.shape());
        y.add_scaled(sigma_n, &noise);
    }
    Ok(y)
}
