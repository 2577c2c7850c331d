//! PSNR and SSIM for images with unit dynamic range.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure_shape, Error, Result};
use crate::image::Image;

/// Value reported when two images are identical.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

pub fn report(a: &Image, b: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
        mse: clamped_mse(a, b)?,
    })
}

/// Mean squared error after clamping both images to `[0, 1]`.
pub fn clamped_mse(a: &Image, b: &Image) -> Result<f64> {
    ensure_shape(a.shape(), b.shape())?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.clamp(0.0, 1.0) - y.clamp(0.0, 1.0);
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` on clamped images, [`PSNR_CAP`] when they coincide.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = clamped_mse(a, b)?;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        10.0 * libm::log10(1.0 / mse)
    }
}

/// Normalized 1-D Gaussian window; the 2-D window is its outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Mirror index with edge repetition (`-1 -> 0`, `n -> n - 1`).
#[inline]
pub fn symmetric_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn blur_plane(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let half = (win.len() / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for r in 0..h {
        for q in 0..w {
            rows[r * w + q] = win
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * plane[r * w + symmetric_index(q as isize + k as isize - half, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for q in 0..w {
            out[r * w + q] = win
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * rows[symmetric_index(r as isize + k as isize - half, h) * w + q])
                .sum();
        }
    }
    out
}

/// Mean structural similarity over all pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ensure_shape(a.shape(), b.shape())?;
    let shape = a.shape();
    let (h, w) = (shape.height, shape.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::param(
            "image",
            format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0;
    for (pa, pb) in a.planes().zip(b.planes()) {
        let sq = |p: &[f64], o: &[f64]| p.iter().zip(o).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = blur_plane(pa, h, w, &win);
        let mu_b = blur_plane(pb, h, w, &win);
        let e_aa = blur_plane(&sq(pa, pa), h, w, &win);
        let e_bb = blur_plane(&sq(pb, pb), h, w, &win);
        let e_ab = blur_plane(&sq(pa, pb), h, w, &win);
        let mut acc = 0.0;
        for i in 0..h * w {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
        total += acc / (h * w) as f64;
    }
    Ok(total / shape.channels as f64)
}
