use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::Kernel;
use crate::error::{ensure_shape, Result};
use crate::fft::Fft2;
use crate::image::{Image, Shape};

/// Circular (periodic-boundary) convolution with a fixed kernel.
///
/// Small kernels run directly in the spatial domain; larger ones go through
/// the DFT diagonalization with a precomputed transfer function.
#[derive(Debug, Clone)]
pub struct CircularBlur {
    kernel: Kernel,
    shape: Shape,
    spectral: Option<Spectral>,
}

#[derive(Debug, Clone)]
struct Spectral {
    fft: Fft2,
    transfer: Vec<Complex64>,
}

impl CircularBlur {
    pub fn new(kernel: Kernel, shape: Shape) -> Self {
        let taps = kernel.height() * kernel.width();
        let log_size = (usize::BITS - shape.height.leading_zeros()) + (usize::BITS - shape.width.leading_zeros());
        let spectral = if taps > 4 * log_size as usize {
            Some(Spectral::new(&kernel, shape))
        } else {
            None
        };
        CircularBlur {
            kernel,
            shape,
            spectral,
        }
    }

    /// Forces the spatial-domain path regardless of kernel size.
    pub fn direct(kernel: Kernel, shape: Shape) -> Self {
        CircularBlur {
            kernel,
            shape,
            spectral: None,
        }
    }

    /// Forces the DFT path regardless of kernel size.
    pub fn spectral(kernel: Kernel, shape: Shape) -> Self {
        let spectral = Some(Spectral::new(&kernel, shape));
        CircularBlur {
            kernel,
            shape,
            spectral,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// DFT of the kernel wrapped onto the image grid (row-major `H x W`).
    pub fn transfer_function(&self) -> Vec<Complex64> {
        match &self.spectral {
            Some(s) => s.transfer.clone(),
            None => Spectral::new(&self.kernel, self.shape).transfer,
        }
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        ensure_shape(self.shape, x.shape())?;
        Ok(self.run(x, false))
    }

    pub fn adjoint(&self, v: &Image) -> Result<Image> {
        ensure_shape(self.shape, v.shape())?;
        Ok(self.run(v, true))
    }

    fn run(&self, x: &Image, adjoint: bool) -> Image {
        let mut out = Vec::with_capacity(self.shape.len());
        for plane in x.planes() {
            match &self.spectral {
                Some(s) => out.extend(s.fft.filter_real(plane, |i| {
                    if adjoint {
                        s.transfer[i].conj()
                    } else {
                        s.transfer[i]
                    }
                })),
                None => out.extend(self.direct_plane(plane, adjoint)),
            }
        }
        Image::from_raw(self.shape, out)
    }

    fn direct_plane(&self, plane: &[f64], adjoint: bool) -> Vec<f64> {
        let (h, w) = (self.shape.height as isize, self.shape.width as isize);
        let (kh, kw) = (self.kernel.height(), self.kernel.width());
        let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
        let mut out = vec![0.0; plane.len()];
        for r in 0..h {
            for q in 0..w {
                let mut acc: Option<f64> = None;
                for a in 0..kh {
                    for b in 0..kw {
                        // convolution reads x[r - (a - ch)], its adjoint x[r + (a - ch)]
                        let (dy, dx) = (a as isize - ch, b as isize - cw);
                        let (sr, sq) = if adjoint { (r + dy, q + dx) } else { (r - dy, q - dx) };
                        let v = self.kernel.get(a, b) * plane[(sr.rem_euclid(h) * w + sq.rem_euclid(w)) as usize];
                        acc = Some(acc.map_or(v, |s| s + v));
                    }
                }
                out[(r * w + q) as usize] = acc.unwrap_or(0.0);
            }
        }
        out
    }
}

impl Spectral {
    fn new(kernel: &Kernel, shape: Shape) -> Self {
        let (h, w) = (shape.height, shape.width);
        let (ch, cw) = ((kernel.height() / 2) as isize, (kernel.width() / 2) as isize);
        let mut embedded = vec![0.0; h * w];
        for a in 0..kernel.height() {
            for b in 0..kernel.width() {
                let r = (a as isize - ch).rem_euclid(h as isize) as usize;
                let q = (b as isize - cw).rem_euclid(w as isize) as usize;
                embedded[r * w + q] += kernel.get(a, b);
            }
        }
        let fft = Fft2::new(h, w);
        let transfer = fft.forward_real(&embedded);
        Spectral { fft, transfer }
    }
}
