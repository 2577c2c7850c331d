use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A 2-D filter with odd dimensions, centered on its middle tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    height: usize,
    width: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        if height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(Error::param(
                "kernel",
                format!("dimensions {height}x{width} must be odd"),
            ));
        }
        if taps.len() != height * width {
            return Err(Error::param(
                "kernel",
                format!("{} taps for a {height}x{width} kernel", taps.len()),
            ));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("kernel taps"));
        }
        Ok(Kernel {
            height,
            width,
            taps,
        })
    }

    pub fn delta() -> Self {
        Kernel {
            height: 1,
            width: 1,
            taps: vec![1.0],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn get(&self, r: usize, q: usize) -> f64 {
        self.taps[r * self.width + q]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Whether the taps sum to one within `1e-12`.
    pub fn is_normalized(&self) -> bool {
        (self.sum() - 1.0).abs() <= 1e-12
    }

    pub fn normalized(mut self) -> Result<Self> {
        let s = self.sum();
        if s == 0.0 || !s.is_finite() {
            return Err(Error::param("kernel", "taps sum to zero"));
        }
        for t in &mut self.taps {
            *t /= s;
        }
        Ok(self)
    }

    pub fn transpose(&self) -> Kernel {
        let mut taps = Vec::with_capacity(self.taps.len());
        for q in 0..self.width {
            for r in 0..self.height {
                taps.push(self.get(r, q));
            }
        }
        Kernel {
            height: self.width,
            width: self.height,
            taps,
        }
    }
}

fn check_odd_size(size: usize) -> Result<()> {
    if size % 2 == 1 {
        Ok(())
    } else {
        Err(Error::param("size", format!("{size} must be odd")))
    }
}

/// Isotropic Gaussian sampled on the integer grid and normalized to unit sum.
pub fn gaussian_kernel(size: usize, std: f64) -> Result<Kernel> {
    check_odd_size(size)?;
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::param("std", format!("{std} must be positive")));
    }
    let c = (size / 2) as f64;
    let denom = 2.0 * std * std;
    let mut taps = Vec::with_capacity(size * size);
    for r in 0..size {
        for q in 0..size {
            let (dy, dx) = (r as f64 - c, q as f64 - c);
            taps.push(libm::exp(-(dy * dy + dx * dx) / denom));
        }
    }
    Kernel::new(size, size, taps)?.normalized()
}

/// Straight motion blur: a unit-mass segment of `length` pixels through the
/// kernel center at `angle_deg` (counter-clockwise from the +x axis),
/// rasterized with bilinear weights.
///
/// Samples sit one pixel apart where possible, so integer lengths along the
/// axes give exactly uniform taps.
pub fn motion_kernel(size: usize, length: f64, angle_deg: f64) -> Result<Kernel> {
    check_odd_size(size)?;
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::param("length", format!("{length} must be positive")));
    }
    if length > size as f64 {
        return Err(Error::param(
            "length",
            format!("{length} exceeds the kernel size {size}"),
        ));
    }
    let theta = angle_deg.to_radians();
    let (dir_x, dir_y) = (libm::cos(theta), libm::sin(theta));
    let c = (size / 2) as f64;
    let samples = (libm::ceil(length - 1e-9) as usize).max(1);
    let snap = |v: f64| {
        let r = libm::round(v);
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    let mut taps = vec![0.0; size * size];
    for k in 0..samples {
        let s = if samples == 1 {
            0.0
        } else {
            -(length - 1.0) / 2.0 + k as f64 * (length - 1.0) / (samples - 1) as f64
        };
        // image rows grow downward
        let x = snap(c + s * dir_x);
        let y = snap(c - s * dir_y);
        let (x0, y0) = (libm::floor(x), libm::floor(y));
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wy * wx;
                if w > 0.0 {
                    taps[(y0 + dy) * size + x0 + dx] += w;
                }
            }
        }
    }
    Kernel::new(size, size, taps)?.normalized()
}
