//! Seeded Gaussian noise streams.
//!
//! Every random draw is addressed by `(seed, purpose, index)` and produced by
//! a ChaCha20 stream selected from those coordinates, so draws never depend
//! on call order or thread count.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::image::{Image, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Initial sampler state `x_T`.
    Init,
    /// Fresh noise injected while renoising at a given step.
    Renoise,
    /// Measurement noise added by the degradation simulator.
    Measurement,
    /// Synthetic draws from a prior (testbeds, self-checks).
    Prior,
    /// Random observation masks.
    Mask,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Renoise => 2,
            Purpose::Measurement => 3,
            Purpose::Prior => 4,
            Purpose::Mask => 5,
        }
    }
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((purpose.tag() << 48) ^ index);
    rng
}

pub fn gaussian_vec(seed: u64, purpose: Purpose, index: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(seed, purpose, index);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `len` uniform draws in `[0, 1)`.
pub fn uniform_vec(seed: u64, purpose: Purpose, index: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(seed, purpose, index);
    (0..len).map(|_| rng.random::<f64>()).collect()
}

/// Unit Gaussian image drawn from the `(seed, purpose, index)` stream.
pub fn gaussian_image(seed: u64, purpose: Purpose, index: u64, shape: Shape) -> Image {
    Image::from_raw(shape, gaussian_vec(seed, purpose, index, shape.len()))
}
