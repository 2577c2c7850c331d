//! Noise predictors `eps(x_t, t)` and the clean-image estimate derived from them.
//!
//! A backend only has to predict noise. The denoiser
//! `f(v; t) = (v - sqrt(1 - abar_t) eps(v; t)) / sqrt(abar_t)` is derived from
//! that prediction, which is also how pretrained diffusion networks are used.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{bin_frequency, Fft2};
use crate::image::{Image, Shape};
use crate::rng::{self, Purpose};
use crate::schedule::NoiseSchedule;

pub trait Denoiser {
    /// Noise estimate for the diffused sample `x_t` at schedule step `t` (1-based).
    fn predict_eps(&mut self, x_t: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image>;

    /// Clean-image estimate `x_{0|t}` obtained from [`Denoiser::predict_eps`].
    fn denoise(&mut self, v: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image> {
        let eps = self.predict_eps(v, t, sched)?;
        Ok(clean_estimate(v, &eps, sched.alpha_bar(t)))
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &mut D {
    fn predict_eps(&mut self, x_t: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image> {
        (**self).predict_eps(x_t, t, sched)
    }

    fn denoise(&mut self, v: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image> {
        (**self).denoise(v, t, sched)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for alloc::boxed::Box<D> {
    fn predict_eps(&mut self, x_t: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image> {
        (**self).predict_eps(x_t, t, sched)
    }

    fn denoise(&mut self, v: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image> {
        (**self).denoise(v, t, sched)
    }
}

/// `(x_t - sqrt(1 - abar) eps) / sqrt(abar)`
pub fn clean_estimate(x_t: &Image, eps: &Image, alpha_bar: f64) -> Image {
    let (sa, sn) = (libm::sqrt(alpha_bar), libm::sqrt(1.0 - alpha_bar));
    x_t.zip_map(eps, |x, e| (x - sn * e) / sa)
}

/// `(x_t - sqrt(abar) x0) / sqrt(1 - abar)`: the noise that makes `x0` the clean estimate.
pub fn noise_from_clean(x_t: &Image, x0: &Image, alpha_bar: f64) -> Image {
    let (sa, sn) = (libm::sqrt(alpha_bar), libm::sqrt(1.0 - alpha_bar));
    x_t.zip_map(x0, |x, c| (x - sa * c) / sn)
}

fn check_input(x: &Image, t: usize, sched: &NoiseSchedule) -> Result<()> {
    sched.check_step(t)?;
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("denoiser input"))
    }
}

/// Per-frequency variances of a stationary zero-mean Gaussian prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpectrum {
    /// i.i.d. pixels with the given variance; `f64::INFINITY` is uninformative.
    White { variance: f64 },
    /// `variance / (1 + rho |f|^2)` with `f` in cycles per pixel.
    Smooth { variance: f64, rho: f64 },
    /// Explicit values on a row-major `height x width` DFT grid.
    Explicit {
        height: usize,
        width: usize,
        values: Vec<f64>,
    },
}

impl PriorSpectrum {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpectrum::White { variance } => {
                if variance.is_nan() || *variance < 0.0 {
                    return Err(Error::param("variance", format!("{variance} is negative")));
                }
            }
            PriorSpectrum::Smooth { variance, rho } => {
                if !(*variance >= 0.0 && variance.is_finite()) {
                    return Err(Error::param("variance", format!("{variance} is invalid")));
                }
                if !(*rho >= 0.0 && rho.is_finite()) {
                    return Err(Error::param("rho", format!("{rho} is invalid")));
                }
            }
            PriorSpectrum::Explicit {
                height,
                width,
                values,
            } => {
                if values.len() != height * width {
                    return Err(Error::param(
                        "spectrum",
                        format!("{} values for a {height}x{width} grid", values.len()),
                    ));
                }
                if values.iter().any(|v| v.is_nan() || *v < 0.0) {
                    return Err(Error::param("spectrum", "entries must be non-negative"));
                }
                // S(k) = S(-k) keeps the filtered images real
                for r in 0..*height {
                    for q in 0..*width {
                        let (mr, mq) = ((height - r) % height, (width - q) % width);
                        if values[r * width + q] != values[mr * width + mq] {
                            return Err(Error::param(
                                "spectrum",
                                "values must be symmetric under frequency negation",
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Scalar variance when the prior is white.
    pub fn white_variance(&self) -> Option<f64> {
        match self {
            PriorSpectrum::White { variance } => Some(*variance),
            _ => None,
        }
    }

    /// Spectrum values on an `h x w` DFT grid.
    pub fn values(&self, h: usize, w: usize) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            PriorSpectrum::White { variance } => Ok(vec![*variance; h * w]),
            PriorSpectrum::Smooth { variance, rho } => {
                let mut out = Vec::with_capacity(h * w);
                for r in 0..h {
                    let fy = bin_frequency(r, h);
                    for q in 0..w {
                        let fx = bin_frequency(q, w);
                        out.push(variance / (1.0 + rho * (fy * fy + fx * fx)));
                    }
                }
                Ok(out)
            }
            PriorSpectrum::Explicit {
                height,
                width,
                values,
            } => {
                if (*height, *width) != (h, w) {
                    return Err(Error::param(
                        "spectrum",
                        format!("defined on {height}x{width}, image is {h}x{w}"),
                    ));
                }
                Ok(values.clone())
            }
        }
    }

    /// Draws an image whose planes are independent samples of this prior.
    pub fn sample(&self, shape: Shape, seed: u64) -> Result<Image> {
        let spec = self.values(shape.height, shape.width)?;
        if spec.iter().any(|s| !s.is_finite()) {
            return Err(Error::param("variance", "cannot sample an infinite-variance prior"));
        }
        let white = rng::gaussian_image(seed, Purpose::Prior, 0, shape);
        let fft = Fft2::new(shape.height, shape.width);
        let mut out = Vec::with_capacity(shape.len());
        for plane in white.planes() {
            out.extend(fft.filter_real(plane, |i| libm::sqrt(spec[i]).into()));
        }
        Ok(Image::from_raw(shape, out))
    }
}

/// Wiener gain `S / (S + noise_var)`, with the `noise_var = 0` and `S = inf` limits equal to one.
#[inline]
pub fn wiener_gain(spectrum: f64, noise_var: f64) -> f64 {
    if noise_var == 0.0 || spectrum == f64::INFINITY {
        1.0
    } else {
        spectrum / (spectrum + noise_var)
    }
}

/// Applies `W = C (C + sigma^2 I)^{-1}` for the circulant prior covariance `C`.
pub fn wiener_matrix_action(spectrum: &PriorSpectrum, sigma: f64, v: &Image) -> Result<Image> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::param("sigma", format!("{sigma} is negative")));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let var = sigma * sigma;
    if let Some(s) = spectrum.white_variance() {
        spectrum.validate()?;
        let g = wiener_gain(s, var);
        return Ok(v.scaled(g));
    }
    let shape = v.shape();
    let spec = spectrum.values(shape.height, shape.width)?;
    let fft = Fft2::new(shape.height, shape.width);
    Ok(filter_planes(v, &fft, |i| wiener_gain(spec[i], var)))
}

fn filter_planes(v: &Image, fft: &Fft2, gain: impl Fn(usize) -> f64) -> Image {
    let mut out = Vec::with_capacity(v.shape().len());
    for plane in v.planes() {
        out.extend(fft.filter_real(plane, |i| gain(i).into()));
    }
    Image::from_raw(v.shape(), out)
}

/// Exact posterior-mean denoiser for a stationary Gaussian prior.
///
/// For `x_t = sqrt(abar) x0 + sqrt(1 - abar) eps` with `x0 ~ N(0, C)`, the
/// posterior mean per DFT frequency is
/// `sqrt(abar) S / (abar S + 1 - abar) * x_t`; the reported noise is the one
/// that reproduces it through the clean-estimate formula.
#[derive(Debug, Clone)]
pub struct WienerDenoiser {
    spectrum: PriorSpectrum,
    grid: Option<(usize, usize, Fft2, Vec<f64>)>,
}

impl WienerDenoiser {
    pub fn new(spectrum: PriorSpectrum) -> Result<Self> {
        spectrum.validate()?;
        Ok(WienerDenoiser {
            spectrum,
            grid: None,
        })
    }

    pub fn spectrum(&self) -> &PriorSpectrum {
        &self.spectrum
    }

    /// Posterior mean `E[x0 | x_t]` at a given `alpha_bar`.
    pub fn posterior_mean(&mut self, x_t: &Image, alpha_bar: f64) -> Result<Image> {
        let noise_var = (1.0 - alpha_bar) / alpha_bar;
        let inv_sa = 1.0 / libm::sqrt(alpha_bar);
        if let Some(s) = self.spectrum.white_variance() {
            let g = wiener_gain(s, noise_var) * inv_sa;
            return Ok(x_t.scaled(g));
        }
        let shape = x_t.shape();
        let stale = !matches!(&self.grid, Some((h, w, ..)) if (*h, *w) == (shape.height, shape.width));
        if stale {
            let values = self.spectrum.values(shape.height, shape.width)?;
            self.grid = Some((shape.height, shape.width, Fft2::new(shape.height, shape.width), values));
        }
        let (_, _, fft, spec) = self.grid.as_ref().expect("grid initialized above");
        Ok(filter_planes(x_t, fft, |i| wiener_gain(spec[i], noise_var) * inv_sa))
    }
}

impl Denoiser for WienerDenoiser {
    fn predict_eps(&mut self, x_t: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image> {
        check_input(x_t, t, sched)?;
        let ab = sched.alpha_bar(t);
        let x0 = self.posterior_mean(x_t, ab)?;
        Ok(noise_from_clean(x_t, &x0, ab))
    }
}

/// Blockwise orthonormal DCT-II soft thresholding.
///
/// The input is shrunk directly with threshold `threshold_scale * sigma_bar_t`;
/// DC coefficients are kept. Edge blocks shrink to whatever fits.
#[derive(Debug, Clone)]
pub struct DctShrinkDenoiser {
    block: usize,
    threshold_scale: f64,
    bases: Vec<(usize, Vec<f64>)>,
}

impl DctShrinkDenoiser {
    pub const DEFAULT_BLOCK: usize = 8;

    pub fn new(block: usize, threshold_scale: f64) -> Result<Self> {
        if block == 0 {
            return Err(Error::param("block", "must be at least 1"));
        }
        if !(threshold_scale >= 0.0 && threshold_scale.is_finite()) {
            return Err(Error::param(
                "threshold_scale",
                format!("{threshold_scale} must be non-negative"),
            ));
        }
        Ok(DctShrinkDenoiser {
            block,
            threshold_scale,
            bases: Vec::new(),
        })
    }

    fn basis(&mut self, n: usize) -> usize {
        if let Some(i) = self.bases.iter().position(|(m, _)| *m == n) {
            return i;
        }
        let mut m = vec![0.0; n * n];
        for k in 0..n {
            let alpha = if k == 0 {
                libm::sqrt(1.0 / n as f64)
            } else {
                libm::sqrt(2.0 / n as f64)
            };
            for j in 0..n {
                let arg = core::f64::consts::PI * (2 * j + 1) as f64 * k as f64 / (2 * n) as f64;
                m[k * n + j] = alpha * libm::cos(arg);
            }
        }
        self.bases.push((n, m));
        self.bases.len() - 1
    }

    /// Soft-thresholds every block of `v` at `threshold`.
    pub fn shrink(&mut self, v: &Image, threshold: f64) -> Image {
        if threshold == 0.0 {
            return v.clone();
        }
        let shape = v.shape();
        let (h, w) = (shape.height, shape.width);
        let mut out = v.clone();
        for c in 0..shape.channels {
            let mut r0 = 0;
            while r0 < h {
                let bh = self.block.min(h - r0);
                let mut q0 = 0;
                while q0 < w {
                    let bw = self.block.min(w - q0);
                    let (iy, ix) = (self.basis(bh), self.basis(bw));
                    let (my, mx) = (&self.bases[iy].1, &self.bases[ix].1);
                    shrink_block(out.plane_mut(c), w, r0, q0, bh, bw, my, mx, threshold);
                    q0 += bw;
                }
                r0 += bh;
            }
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn shrink_block(
    plane: &mut [f64],
    stride: usize,
    r0: usize,
    q0: usize,
    bh: usize,
    bw: usize,
    my: &[f64],
    mx: &[f64],
    threshold: f64,
) {
    let mut block = vec![0.0; bh * bw];
    for r in 0..bh {
        block[r * bw..(r + 1) * bw].copy_from_slice(&plane[(r0 + r) * stride + q0..][..bw]);
    }
    // coefficients = My * B * Mx^T
    let mut tmp = vec![0.0; bh * bw];
    for k in 0..bh {
        for q in 0..bw {
            tmp[k * bw + q] = (0..bh).map(|r| my[k * bh + r] * block[r * bw + q]).sum();
        }
    }
    let mut coef = vec![0.0; bh * bw];
    for k in 0..bh {
        for l in 0..bw {
            coef[k * bw + l] = (0..bw).map(|q| tmp[k * bw + q] * mx[l * bw + q]).sum();
        }
    }
    for c in coef.iter_mut().skip(1) {
        let mag = c.abs() - threshold;
        *c = if mag > 0.0 { c.signum() * mag } else { 0.0 };
    }
    // B = My^T * C * Mx
    for r in 0..bh {
        for l in 0..bw {
            tmp[r * bw + l] = (0..bh).map(|k| my[k * bh + r] * coef[k * bw + l]).sum();
        }
    }
    for r in 0..bh {
        for q in 0..bw {
            plane[(r0 + r) * stride + q0 + q] = (0..bw).map(|l| tmp[r * bw + l] * mx[l * bw + q]).sum();
        }
    }
}

impl Denoiser for DctShrinkDenoiser {
    fn predict_eps(&mut self, x_t: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image> {
        check_input(x_t, t, sched)?;
        let ab = sched.alpha_bar(t);
        let f = self.shrink(x_t, self.threshold_scale * sched.sigma_bar(t));
        Ok(noise_from_clean(x_t, &f, ab))
    }
}
