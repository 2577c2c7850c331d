use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure_shape, Error, Result};
use crate::image::{Image, Shape};

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// One-dimensional antialiased cubic decimation by an integer factor with
/// periodic boundaries: `out[i] = sum_k w_k * in[(i * scale + offset_k) mod n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decimator {
    scale: usize,
    offsets: Vec<isize>,
    weights: Vec<f64>,
}

impl Decimator {
    pub fn new(scale: usize) -> Self {
        let s = scale as f64;
        // output sample i is centred at input coordinate (i + 1/2) * s - 1/2
        let center = (s - 1.0) / 2.0;
        let lo = libm::floor(center - 2.0 * s) as isize + 1;
        let hi = libm::ceil(center + 2.0 * s) as isize - 1;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for j in lo..=hi {
            let w = cubic((j as f64 - center) / s);
            if w != 0.0 {
                offsets.push(j);
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Decimator {
            scale,
            offsets,
            weights,
        }
    }

    pub fn taps(&self) -> impl Iterator<Item = (isize, f64)> + '_ {
        self.offsets.iter().copied().zip(self.weights.iter().copied())
    }

    /// Decimates `input` read with `stride`, writing `n_out` samples with `stride` into `out`.
    fn forward(&self, input: &[f64], n_in: usize, stride: usize, out: &mut [f64], n_out: usize) {
        for i in 0..n_out {
            let base = (i * self.scale) as isize;
            let mut acc = 0.0;
            for (o, w) in self.taps() {
                let j = (base + o).rem_euclid(n_in as isize) as usize;
                acc += w * input[j * stride];
            }
            out[i * stride] = acc;
        }
    }

    fn adjoint(&self, input: &[f64], n_out: usize, stride: usize, out: &mut [f64], n_in: usize) {
        for i in 0..n_out {
            let base = (i * self.scale) as isize;
            let v = input[i * stride];
            for (o, w) in self.taps() {
                let j = (base + o).rem_euclid(n_in as isize) as usize;
                out[j * stride] += w * v;
            }
        }
    }
}

/// Separable antialiased bicubic downsampling by an integer `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct BicubicDownsample {
    scale: usize,
    input: Shape,
    output: Shape,
    filter: Decimator,
}

impl BicubicDownsample {
    pub fn new(scale: usize, input: Shape) -> Result<Self> {
        if scale == 0 {
            return Err(Error::param("scale", "must be at least 1"));
        }
        if !input.height.is_multiple_of(scale) || !input.width.is_multiple_of(scale) {
            return Err(Error::param(
                "scale",
                format!("{}x{} is not divisible by {scale}", input.height, input.width),
            ));
        }
        let output = Shape::new(input.channels, input.height / scale, input.width / scale);
        Ok(BicubicDownsample {
            scale,
            input,
            output,
            filter: Decimator::new(scale),
        })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.output
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        ensure_shape(self.input, x.shape())?;
        let (h, w) = (self.input.height, self.input.width);
        let (oh, ow) = (self.output.height, self.output.width);
        let mut out = Vec::with_capacity(self.output.len());
        let mut rows = vec![0.0; h * ow];
        let mut plane_out = vec![0.0; oh * ow];
        for plane in x.planes() {
            for r in 0..h {
                self.filter
                    .forward(&plane[r * w..(r + 1) * w], w, 1, &mut rows[r * ow..(r + 1) * ow], ow);
            }
            for q in 0..ow {
                self.filter.forward(&rows[q..], h, ow, &mut plane_out[q..], oh);
            }
            out.extend_from_slice(&plane_out);
        }
        Ok(Image::from_raw(self.output, out))
    }

    pub fn adjoint(&self, v: &Image) -> Result<Image> {
        ensure_shape(self.output, v.shape())?;
        let (h, w) = (self.input.height, self.input.width);
        let (oh, ow) = (self.output.height, self.output.width);
        let mut out = Vec::with_capacity(self.input.len());
        for plane in v.planes() {
            let mut rows = vec![0.0; h * ow];
            for q in 0..ow {
                self.filter.adjoint(&plane[q..], oh, ow, &mut rows[q..], h);
            }
            let mut full = vec![0.0; h * w];
            for r in 0..h {
                self.filter
                    .adjoint(&rows[r * ow..(r + 1) * ow], ow, 1, &mut full[r * w..(r + 1) * w], w);
            }
            out.extend_from_slice(&full);
        }
        Ok(Image::from_raw(self.input, out))
    }
}
