//! Complex FFTs of arbitrary length.
//!
//! Powers of two use an iterative radix-2 kernel; every other length goes
//! through Bluestein's chirp-z reformulation on top of it. Forward transforms
//! are unnormalized, inverse transforms carry the `1/n` factor.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone)]
struct Radix2 {
    n: usize,
    /// `exp(-2πik/n)` for `k < n/2`.
    twiddles: Vec<Complex64>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let twiddles = (0..n / 2)
            .map(|k| {
                let theta = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(libm::cos(theta), libm::sin(theta))
            })
            .collect();
        Radix2 { n, twiddles }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.n;
        if n <= 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

#[derive(Debug, Clone)]
struct Bluestein {
    n: usize,
    inner: Radix2,
    /// `exp(-πik²/n)`
    chirp: Vec<Complex64>,
    /// Forward transform of the conjugate chirp, wrapped to the padded length.
    kernel_spectrum: Vec<Complex64>,
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        let two_n = 2 * n as u128;
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                // k² mod 2n keeps the phase argument small for large k.
                let k2 = ((k as u128 * k as u128) % two_n) as f64;
                let theta = -PI * k2 / n as f64;
                Complex64::new(libm::cos(theta), libm::sin(theta))
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.forward(&mut kernel);
        Bluestein {
            n,
            inner,
            chirp,
            kernel_spectrum: kernel,
        }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        let m = self.inner.n;
        let mut work = vec![Complex64::new(0.0, 0.0); m];
        for ((w, x), c) in work.iter_mut().zip(buf.iter()).zip(&self.chirp) {
            *w = x * c;
        }
        self.inner.forward(&mut work);
        for (w, k) in work.iter_mut().zip(&self.kernel_spectrum) {
            *w = (*w * k).conj();
        }
        // inverse via conjugation
        self.inner.forward(&mut work);
        let scale = 1.0 / m as f64;
        for ((out, w), c) in buf.iter_mut().zip(&work).take(self.n).zip(&self.chirp) {
            *out = w.conj() * scale * c;
        }
    }
}

#[derive(Debug, Clone)]
enum Plan {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

/// A reusable one-dimensional FFT plan.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    plan: Plan,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let plan = if n.is_power_of_two() {
            Plan::Radix2(Radix2::new(n))
        } else {
            Plan::Bluestein(Bluestein::new(n))
        };
        Fft { n, plan }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n);
        match &self.plan {
            Plan::Radix2(p) => p.forward(buf),
            Plan::Bluestein(p) => p.forward(buf),
        }
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
    }
}

/// Two-dimensional FFT over a row-major `height × width` grid.
#[derive(Debug, Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    rows: Fft,
    cols: Fft,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        Fft2 {
            height,
            width,
            rows: Fft::new(width),
            cols: Fft::new(height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, true);
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.height * self.width);
        for row in data.chunks_exact_mut(self.width) {
            if inverse {
                self.rows.inverse(row);
            } else {
                self.rows.forward(row);
            }
        }
        let mut col = vec![Complex64::new(0.0, 0.0); self.height];
        for q in 0..self.width {
            for (r, c) in col.iter_mut().enumerate() {
                *c = data[r * self.width + q];
            }
            if inverse {
                self.cols.inverse(&mut col);
            } else {
                self.cols.forward(&mut col);
            }
            for (r, c) in col.iter().enumerate() {
                data[r * self.width + q] = *c;
            }
        }
    }

    /// Forward transform of a real plane.
    pub fn forward_real(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform, keeping the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut spectrum);
        spectrum.into_iter().map(|c| c.re).collect()
    }

    /// Multiplies the spectrum of `plane` by `gain` and transforms back.
    ///
    /// `gain` must be conjugate-symmetric for the result to be exactly real.
    pub fn filter_real(&self, plane: &[f64], gain: impl Fn(usize) -> Complex64) -> Vec<f64> {
        let mut spec = self.forward_real(plane);
        for (i, s) in spec.iter_mut().enumerate() {
            *s *= gain(i);
        }
        self.inverse_real(spec)
    }
}

/// Signed frequency (cycles per sample) of DFT bin `k` on an `n`-point grid.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    let signed = if 2 * k <= n { k as f64 } else { k as f64 - n as f64 };
    signed / n as f64
}
