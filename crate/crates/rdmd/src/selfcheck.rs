//! Built-in invariant checks, runnable from an installed binary.

use rayon::prelude::*;
use rdmd_core::denoisers::clean_estimate;
use rdmd_core::operators::{gaussian_kernel, Kernel, PixelMask};
use rdmd_core::rng::{gaussian_image, Purpose};
use rdmd_core::solver::{effective_noise, restore, restore_red};
use rdmd_core::testbed::Testbed;
use rdmd_core::{
    DctShrinkDenoiser, DetMode, DetSchedule, Denoiser, ForwardOperator, Image, NoiseSchedule, PriorSpectrum, Problem,
    Shape, SolverConfig, WienerDenoiser,
};

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfcheckOptions {
    /// Scale the blur kernel off unit sum before checking; exercises the failure path.
    pub corrupt_kernel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<20} {}", self.name, self.detail)
    }
}

type Check = fn(&SelfcheckOptions) -> Result<(bool, String), rdmd_core::Error>;

const CHECKS: [(&str, Check); 7] = [
    ("adjoint", check_adjoint),
    ("kernel-normalization", check_kernel_normalization),
    ("schedule", check_schedule),
    ("eps-roundtrip", check_eps_roundtrip),
    ("renoising-identity", check_renoising),
    ("scalar-oracle", check_scalar_oracle),
    ("determinism", check_determinism),
];

/// Runs every check on the current rayon pool; results keep the fixed order.
pub fn run_checks(opts: &SelfcheckOptions) -> Vec<CheckResult> {
    CHECKS
        .par_iter()
        .map(|(name, check)| match check(opts) {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

fn blur_kernel(opts: &SelfcheckOptions) -> Result<Kernel, rdmd_core::Error> {
    let k = gaussian_kernel(61, 3.0)?;
    if opts.corrupt_kernel {
        Kernel::new(k.height(), k.width(), k.taps().iter().map(|v| v * 1.05).collect())
    } else {
        Ok(k)
    }
}

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).expect("default schedule")
}

fn check_adjoint(opts: &SelfcheckOptions) -> Result<(bool, String), rdmd_core::Error> {
    let mut worst: f64 = 0.0;
    let shapes = [Shape::new(1, 16, 16), Shape::new(3, 12, 20), Shape::new(2, 24, 8)];
    for (i, &s) in shapes.iter().enumerate() {
        let keep = (0..s.plane_len()).map(|j| (j * 7 + i) % 3 != 0).collect();
        let ops = [
            ForwardOperator::identity(s),
            ForwardOperator::blur(blur_kernel(opts)?, s),
            ForwardOperator::blur(gaussian_kernel(5, 1.0)?, s),
            ForwardOperator::downsample(4, s)?,
            ForwardOperator::mask(PixelMask::new(s, keep)?),
        ];
        for (k, op) in ops.iter().enumerate() {
            let idx = (10 * i + k) as u64;
            let u = gaussian_image(1, Purpose::Prior, idx, op.input_shape());
            let v = gaussian_image(2, Purpose::Prior, idx, op.output_shape());
            let lhs = op.apply(&u)?.dot(&v);
            let rhs = u.dot(&op.adjoint(&v)?);
            worst = worst.max((lhs - rhs).abs() / (u.norm() * v.norm()));
        }
    }
    Ok((worst <= 1e-10, format!("max relative mismatch {worst:.3e}")))
}

fn check_kernel_normalization(opts: &SelfcheckOptions) -> Result<(bool, String), rdmd_core::Error> {
    let k = blur_kernel(opts)?;
    Ok((k.is_normalized(), format!("61x61 gaussian tap sum {:.15}", k.sum())))
}

fn check_schedule(_: &SelfcheckOptions) -> Result<(bool, String), rdmd_core::Error> {
    let s = sched();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for t in 1..=s.steps() {
        ok &= s.alpha_bar(t) < s.alpha_bar(t - 1) && s.sigma_bar(t) > s.sigma_bar(t - 1);
        ok &= s.lookup_tprime(s.sigma_bar(t)) == t;
        worst = worst.max((s.alpha_bar(t) * (1.0 + s.sigma_bar(t).powi(2)) - 1.0).abs());
    }
    Ok((ok && worst <= 1e-12, format!("monotone, t' round trip, identity error {worst:.3e}")))
}

fn check_eps_roundtrip(_: &SelfcheckOptions) -> Result<(bool, String), rdmd_core::Error> {
    let s = sched();
    let shape = Shape::new(1, 16, 16);
    let mut backends: Vec<Box<dyn Denoiser>> = vec![
        Box::new(WienerDenoiser::new(Testbed::spectrum())?),
        Box::new(DctShrinkDenoiser::new(DctShrinkDenoiser::DEFAULT_BLOCK, 1.0)?),
    ];
    let mut worst: f64 = 0.0;
    for (i, b) in backends.iter_mut().enumerate() {
        for t in [1, 10, 250, 999] {
            let x = gaussian_image(3, Purpose::Prior, (i * 1000 + t) as u64, shape);
            let eps = b.predict_eps(&x, t, &s)?;
            let x0 = clean_estimate(&x, &eps, s.alpha_bar(t));
            let ab = s.alpha_bar(t);
            let back = x0.zip_map(&eps, |c, e| ab.sqrt() * c + (1.0 - ab).sqrt() * e);
            worst = worst.max(back.sub(&x).data().iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    Ok((worst <= 1e-12, format!("max abs error {worst:.3e}")))
}

fn check_renoising(_: &SelfcheckOptions) -> Result<(bool, String), rdmd_core::Error> {
    let s = sched();
    let mut den = WienerDenoiser::new(Testbed::spectrum())?;
    let mut worst: f64 = 0.0;
    for (i, t) in [3, 47, 120, 333, 501, 640, 777, 850, 921, 1000].into_iter().enumerate() {
        let x = gaussian_image(4, Purpose::Prior, i as u64, Shape::new(1, 16, 16));
        let eps = den.predict_eps(&x, t, &s)?;
        let x0 = den.denoise(&x, t, &s)?;
        let hat = effective_noise(&x, &x0, s.alpha_bar(t));
        worst = worst.max(hat.sub(&eps).data().iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    Ok((worst <= 1e-12, format!("max abs error {worst:.3e}")))
}

fn check_scalar_oracle(_: &SelfcheckOptions) -> Result<(bool, String), rdmd_core::Error> {
    let s = sched();
    let shape = Shape::new(1, 1, 1);
    let op = ForwardOperator::identity(shape);
    let y = Image::filled(shape, 0.7);
    let (prior, lambda, sigma_n, sigma_det) = (0.5, 40.0, 0.1, 0.3);
    let steps = 400;
    let det = DetSchedule::new(steps, DetMode::Constant { sigma: sigma_det })?;
    let cfg = SolverConfig {
        lambda,
        sigma_n,
        eta: 0.25,
        steps,
        ..Default::default()
    };
    let mut den = WienerDenoiser::new(PriorSpectrum::White { variance: prior })?;
    let z = restore_red(&Problem::new(&y, &op, &s).with_det(&det), &mut den, &cfg)?.x0.data()[0];
    let ab = s.alpha_bar(s.lookup_tprime(sigma_det));
    let gain = ab.sqrt() * prior / (ab * prior + 1.0 - ab);
    let c = lambda * sigma_n * sigma_n;
    let want = 2.0 * 0.7 / (2.0 + c * (1.0 - gain));
    let err = (z - want).abs() / want;
    Ok((err <= 1e-10, format!("relative error {err:.3e}")))
}

fn check_determinism(_: &SelfcheckOptions) -> Result<(bool, String), rdmd_core::Error> {
    let tb = Testbed::gaussian_blur(5)?;
    let s = sched();
    let det = DetSchedule::new(20, DetMode::default_for_noise(tb.sigma_n))?;
    let cfg = SolverConfig {
        lambda: 5.0,
        eta: 0.2,
        steps: 20,
        seed: 11,
        ..Default::default()
    };
    let problem = Problem::new(&tb.y, &tb.op, &s).with_det(&det);
    let run = || -> Result<Image, rdmd_core::Error> {
        let mut den = WienerDenoiser::new(tb.spectrum.clone())?;
        Ok(restore(&problem, &mut den, &cfg)?.x0)
    };
    let (a, b) = (run()?, run()?);
    let same = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    Ok((same, format!("two seeded runs bit-identical: {same}")))
}
