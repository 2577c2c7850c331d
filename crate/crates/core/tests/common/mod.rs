//! Reference implementations shared by the integration tests. Everything here
//! is written the slow, obvious way and does not call into the solver paths
//! it is used to check.
#![allow(dead_code, clippy::needless_range_loop)]

use num_complex::Complex64;
use rdmd_core::image::{Image, Shape};
use std::f64::consts::PI;

/// Deterministic test inputs (SplitMix64), independent of the library's RNG.
pub struct Inputs(u64);

impl Inputs {
    pub fn new(seed: u64) -> Self {
        Inputs(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [-1, 1).
    pub fn signed(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    pub fn image(&mut self, shape: Shape) -> Image {
        Image::from_fn(shape, |_, _, _| self.signed())
    }

    pub fn unit_image(&mut self, shape: Shape) -> Image {
        Image::from_fn(shape, |_, _, _| self.uniform())
    }
}

/// Naive 2-D DFT, O(N^2) per output bin.
pub fn dft2(plane: &[Complex64], h: usize, w: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..h {
                for q in 0..w {
                    let phase = sign
                        * 2.0
                        * PI
                        * (((ky * r) % h) as f64 / h as f64 + ((kx * q) % w) as f64 / w as f64);
                    acc += plane[r * w + q] * Complex64::new(phase.cos(), phase.sin());
                }
            }
            out[ky * w + kx] = if inverse { acc / (h * w) as f64 } else { acc };
        }
    }
    out
}

pub fn dft2_real(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let c: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dft2(&c, h, w, false)
}

pub fn idft2_real(spec: &[Complex64], h: usize, w: usize) -> Vec<f64> {
    dft2(spec, h, w, true).into_iter().map(|c| c.re).collect()
}

/// DFT of a centred kernel wrapped onto an `h x w` torus.
pub fn kernel_transfer(taps: &[f64], kh: usize, kw: usize, h: usize, w: usize) -> Vec<Complex64> {
    let mut embedded = vec![0.0; h * w];
    for a in 0..kh {
        for b in 0..kw {
            let r = (a as isize - (kh / 2) as isize).rem_euclid(h as isize) as usize;
            let q = (b as isize - (kw / 2) as isize).rem_euclid(w as isize) as usize;
            embedded[r * w + q] += taps[a * kw + b];
        }
    }
    dft2_real(&embedded, h, w)
}

/// Direct periodic convolution `y[i] = sum_m k[m] x[i - (m - c)]`.
pub fn naive_circular_conv(x: &Image, taps: &[f64], kh: usize, kw: usize) -> Image {
    let s = x.shape();
    let (h, w) = (s.height as isize, s.width as isize);
    Image::from_fn(s, |c, r, q| {
        let mut acc = 0.0;
        for a in 0..kh {
            for b in 0..kw {
                let rr = (r as isize - (a as isize - (kh / 2) as isize)).rem_euclid(h) as usize;
                let qq = (q as isize - (b as isize - (kw / 2) as isize)).rem_euclid(w) as usize;
                acc += taps[a * kw + b] * x.get(c, rr, qq);
            }
        }
        acc
    })
}

/// `|<Au, v> - <u, A^T v>| / (|u| |v|)`
pub fn adjoint_mismatch(au: &Image, v: &Image, u: &Image, atv: &Image) -> f64 {
    let lhs: f64 = au.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = u.data().iter().zip(atv.data()).map(|(a, b)| a * b).sum();
    let nu = u.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    (lhs - rhs).abs() / (nu * nv)
}

/// Spectrum of the smoothness prior, computed independently of the library.
pub fn smooth_spectrum(variance: f64, rho: f64, h: usize, w: usize) -> Vec<f64> {
    let freq = |k: usize, n: usize| {
        let k = k as f64;
        let n = n as f64;
        if 2.0 * k <= n { k / n } else { (k - n) / n }
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for q in 0..w {
            let (fy, fx) = (freq(r, h), freq(q, w));
            out.push(variance / (1.0 + rho * (fy * fy + fx * fx)));
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(g, w)| (g - w) * (g - w)).sum::<f64>().sqrt();
    let den: f64 = want.iter().map(|w| w * w).sum::<f64>().sqrt();
    num / den
}

/// Solves `m x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &c| m[a][col].abs().total_cmp(&m[c][col].abs())).unwrap();
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    x
}

/// Dense circulant covariance of a stationary field with the given spectrum.
pub fn circulant_from_spectrum(spec: &[f64], h: usize, w: usize) -> Vec<Vec<f64>> {
    let c: Vec<Complex64> = spec.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    let autocov: Vec<f64> = dft2(&c, h, w, true).into_iter().map(|v| v.re).collect();
    let n = h * w;
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        let (ri, qi) = (i / w, i % w);
        for (j, v) in row.iter_mut().enumerate() {
            let (rj, qj) = (j / w, j % w);
            let dr = (ri + h - rj) % h;
            let dq = (qi + w - qj) % w;
            *v = autocov[dr * w + dq];
        }
    }
    m
}

pub fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Gain of the Gaussian posterior mean `E[x0 | x_t]` at one frequency.
pub fn posterior_gain(spectrum: f64, alpha_bar: f64) -> f64 {
    alpha_bar.sqrt() * spectrum / (alpha_bar * spectrum + 1.0 - alpha_bar)
}

/// Multiplies every plane by a per-frequency gain using the naive DFT.
pub fn apply_gain(x: &Image, gain: &[Complex64]) -> Image {
    let s = x.shape();
    let mut out = Vec::with_capacity(s.len());
    for plane in x.planes() {
        let f = dft2_real(plane, s.height, s.width);
        let g: Vec<Complex64> = f.iter().zip(gain).map(|(a, b)| a * b).collect();
        out.extend(idft2_real(&g, s.height, s.width));
    }
    Image::new(s, out).unwrap()
}

/// Fixed point of the deterministic iteration for a circulant blur and a
/// posterior-mean denoiser with per-frequency gain `g`:
/// `Z = 2 conj(K) Y / (2 |K|^2 + c (1 - g))`.
pub fn red_fixed_point(y: &Image, transfer: &[Complex64], g: &[f64], c: f64) -> Image {
    let gain: Vec<Complex64> = transfer
        .iter()
        .zip(g)
        .map(|(k, &gk)| 2.0 * k.conj() / (2.0 * k.norm_sqr() + c * (1.0 - gk)))
        .collect();
    apply_gain(y, &gain)
}

/// Extreme eigenvalues `(m, L)` of `2 A^T A + c (I - G)` in the DFT basis.
pub fn red_spectrum_bounds(transfer: &[Complex64], g: &[f64], c: f64) -> (f64, f64) {
    transfer.iter().zip(g).fold((f64::INFINITY, 0.0f64), |(lo, hi), (k, &gk)| {
        let e = 2.0 * k.norm_sqr() + c * (1.0 - gk);
        (lo.min(e), hi.max(e))
    })
}

/// Sliding-window SSIM with an explicit 2-D window and two-pass local moments.
pub fn naive_ssim(a: &Image, b: &Image) -> f64 {
    let s = a.shape();
    let (h, w) = (s.height as isize, s.width as isize);
    let reflect = |i: isize, n: isize| {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (dy, row) in win.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (u, q) = (dy as f64 - 5.0, dx as f64 - 5.0);
            *v = (-(u * u + q * q) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    for c in 0..s.channels {
        for r in 0..h {
            for q in 0..w {
                let at = |img: &Image, dy: usize, dx: usize| {
                    img.get(c, reflect(r + dy as isize - 5, h), reflect(q + dx as isize - 5, w))
                };
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let k = win[dy][dx] / total;
                        ma += k * at(a, dy, dx);
                        mb += k * at(b, dy, dx);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let k = win[dy][dx] / total;
                        let (da, db) = (at(a, dy, dx) - ma, at(b, dy, dx) - mb);
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    acc / s.len() as f64
}

pub fn naive_psnr(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    let mean_sq: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.clamp(0.0, 1.0) - y.clamp(0.0, 1.0)).powi(2))
        .sum::<f64>()
        / n;
    -10.0 * mean_sq.log10()
}
