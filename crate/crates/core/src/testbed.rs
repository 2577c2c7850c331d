//! Synthetic Gaussian-prior deblurring problem.
//!
//! Images are drawn from a stationary Gaussian prior and blurred circularly,
//! so every linear quantity of the solver is diagonal in the DFT basis and
//! has a closed form to compare against.

use crate::denoisers::PriorSpectrum;
use crate::error::Result;
use crate::image::{Image, Shape};
use crate::operators::{degrade, gaussian_kernel, ForwardOperator, Kernel};

pub const SIZE: usize = 32;
pub const KERNEL_SIZE: usize = 9;
/// The 61-tap, std 3.0 blur shrunk proportionally to a 9-tap support.
pub const KERNEL_STD: f64 = 3.0 * KERNEL_SIZE as f64 / 61.0;
pub const SIGMA_N: f64 = 0.05;
pub const PRIOR_VARIANCE: f64 = 1.0;
pub const PRIOR_RHO: f64 = 400.0;

#[derive(Debug, Clone)]
pub struct Testbed {
    pub spectrum: PriorSpectrum,
    pub kernel: Kernel,
    pub op: ForwardOperator,
    pub x_true: Image,
    pub y: Image,
    pub sigma_n: f64,
}

impl Testbed {
    pub fn shape() -> Shape {
        Shape::new(1, SIZE, SIZE)
    }

    pub fn spectrum() -> PriorSpectrum {
        PriorSpectrum::Smooth {
            variance: PRIOR_VARIANCE,
            rho: PRIOR_RHO,
        }
    }

    /// Ground truth drawn from the prior with `seed`, measured with noise from the same seed.
    pub fn gaussian_blur(seed: u64) -> Result<Self> {
        let shape = Self::shape();
        let spectrum = Self::spectrum();
        let kernel = gaussian_kernel(KERNEL_SIZE, KERNEL_STD)?;
        let op = ForwardOperator::blur(kernel.clone(), shape);
        let x_true = spectrum.sample(shape, seed)?;
        let y = degrade(&op, &x_true, SIGMA_N, seed)?;
        Ok(Testbed {
            spectrum,
            kernel,
            op,
            x_true,
            y,
            sigma_n: SIGMA_N,
        })
    }
}
