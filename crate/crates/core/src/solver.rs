//! The dual-regularized restoration iteration.
//!
//! One noise predictor plays two roles. On the sampler chain `x_t` it yields
//! the one-step clean estimate `x_{0|t}` that the auxiliary variable `z` is
//! coupled to. On `z` itself it acts as a fixed-level Gaussian denoiser whose
//! residual `z - f(z; t')` is the gradient of the denoising regularizer. `tau`
//! splits the regularization weight between the two, and `zeta` sets how much
//! fresh noise the sampler chain receives when it is rebuilt around the new `z`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::denoisers::Denoiser;
use crate::error::{ensure_shape, Error, Result};
use crate::image::Image;
use crate::metrics;
use crate::operators::ForwardOperator;
use crate::rng::{self, Purpose};
use crate::schedule::{DetSchedule, NoiseSchedule, StepMap};

/// Divergence threshold relative to `1 + ||y||`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Overall regularization strength.
    pub lambda: f64,
    /// Share of the regularization given to the stochastic branch.
    pub tau: f64,
    /// Fraction of fresh noise used when renoising.
    pub zeta: f64,
    /// Gradient step on `z`.
    pub eta: f64,
    /// Measurement noise standard deviation.
    pub sigma_n: f64,
    #[serde(rename = "T_solve")]
    pub steps: usize,
    pub seed: u64,
    /// Record every n-th step in the trace; 0 disables tracing.
    pub trace_every: usize,
    /// Rebuild the sampler chain from `z` after every update. When off, only
    /// `z` is iterated and returned.
    pub renoise: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            tau: 0.5,
            zeta: 0.5,
            eta: 0.25,
            sigma_n: 0.05,
            steps: 100,
            seed: 0,
            trace_every: 1,
            renoise: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name, ok: bool, v: f64, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} {what}")))
            }
        };
        check("lambda", self.lambda >= 0.0 && self.lambda.is_finite(), self.lambda, "must be non-negative")?;
        check("tau", (0.0..=1.0).contains(&self.tau), self.tau, "is outside [0, 1]")?;
        check("zeta", (0.0..=1.0).contains(&self.zeta), self.zeta, "is outside [0, 1]")?;
        check("eta", self.eta > 0.0 && self.eta.is_finite(), self.eta, "must be positive")?;
        check("sigma_n", self.sigma_n >= 0.0 && self.sigma_n.is_finite(), self.sigma_n, "must be non-negative")?;
        if self.steps == 0 {
            return Err(Error::param("T_solve", "must be at least 1"));
        }
        Ok(())
    }

    /// Weight of `(z - x_{0|t})` at noise level `sigma_bar`: `tau lambda sigma_n^2 / sigma_bar^2`.
    pub fn coupling_weight(&self, sigma_bar: f64) -> f64 {
        self.tau * self.lambda * self.sigma_n * self.sigma_n / (sigma_bar * sigma_bar)
    }

    /// Weight of `(z - f(z; t'))`: `(1 - tau) lambda sigma_n^2`.
    pub fn red_weight(&self) -> f64 {
        (1.0 - self.tau) * self.lambda * self.sigma_n * self.sigma_n
    }
}

/// Per-step diagnostics, recorded before the step's update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Solver step, counting down from `T_solve` to 1.
    pub step: usize,
    /// `||y - A z_t||^2`
    pub data_fidelity: f64,
    /// `||z_t - x_{0|t}||^2`, when the stochastic branch ran.
    pub coupling_norm: Option<f64>,
    /// `||z_t - f(z_t; t')||^2`, when the deterministic branch ran.
    pub red_norm: Option<f64>,
    /// PSNR of the updated `z` against the reference, when one was given.
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RestorationResult {
    pub x0: Image,
    pub trace: Vec<TraceRecord>,
}

/// Measurement, operator and schedules of one restoration problem.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub y: &'a Image,
    pub op: &'a ForwardOperator,
    pub sched: &'a NoiseSchedule,
    /// Noise levels of the deterministic branch; unused when `tau == 1`.
    pub det: Option<&'a DetSchedule>,
    /// Ground truth for per-step PSNR in the trace.
    pub reference: Option<&'a Image>,
}

impl<'a> Problem<'a> {
    pub fn new(y: &'a Image, op: &'a ForwardOperator, sched: &'a NoiseSchedule) -> Self {
        Problem {
            y,
            op,
            sched,
            det: None,
            reference: None,
        }
    }

    pub fn with_det(mut self, det: &'a DetSchedule) -> Self {
        self.det = Some(det);
        self
    }

    pub fn with_reference(mut self, reference: &'a Image) -> Self {
        self.reference = Some(reference);
        self
    }
}

/// Runs the full iteration from `x_T ~ N(0, I)`, `z_T = A^T y`.
pub fn restore(problem: &Problem<'_>, backend: &mut dyn Denoiser, cfg: &SolverConfig) -> Result<RestorationResult> {
    run(problem, backend, cfg, None)
}

/// As [`restore`], starting the sampler chain from a given `x_T`.
pub fn restore_with_init(
    problem: &Problem<'_>,
    backend: &mut dyn Denoiser,
    cfg: &SolverConfig,
    x_init: &Image,
) -> Result<RestorationResult> {
    run(problem, backend, cfg, Some(x_init))
}

/// Purely deterministic mode: `tau = 0`, no sampler chain, returns `z_0`.
pub fn restore_red(problem: &Problem<'_>, backend: &mut dyn Denoiser, cfg: &SolverConfig) -> Result<RestorationResult> {
    let cfg = SolverConfig {
        tau: 0.0,
        renoise: false,
        ..*cfg
    };
    run(problem, backend, &cfg, None)
}

/// Purely stochastic mode: `tau = 1`, the deterministic branch is never evaluated.
pub fn restore_diffpir_like(
    problem: &Problem<'_>,
    backend: &mut dyn Denoiser,
    cfg: &SolverConfig,
) -> Result<RestorationResult> {
    let cfg = SolverConfig { tau: 1.0, ..*cfg };
    run(problem, backend, &cfg, None)
}

/// Renoised sampler state
/// `sqrt(abar_prev) z + sqrt(1 - abar_prev) (sqrt(1 - zeta) eps_hat + sqrt(zeta) eps)`,
/// where `eps_hat = (x_t - sqrt(abar_t) z) / sqrt(1 - abar_t)` is the effective noise.
///
/// `fresh` is only read when `zeta > 0`.
pub fn renoise(
    x_t: &Image,
    z: &Image,
    alpha_bar: f64,
    alpha_bar_prev: f64,
    zeta: f64,
    fresh: Option<&Image>,
) -> Image {
    let (sp, np) = (libm::sqrt(alpha_bar_prev), libm::sqrt(1.0 - alpha_bar_prev));
    let mut out = z.scaled(sp);
    if np == 0.0 {
        return out;
    }
    if zeta < 1.0 {
        let eps_hat = effective_noise(x_t, z, alpha_bar);
        out.add_scaled(np * libm::sqrt(1.0 - zeta), &eps_hat);
    }
    if zeta > 0.0 {
        if let Some(eps) = fresh {
            out.add_scaled(np * libm::sqrt(zeta), eps);
        }
    }
    out
}

/// `(x_t - sqrt(abar_t) z) / sqrt(1 - abar_t)`
pub fn effective_noise(x_t: &Image, z: &Image, alpha_bar: f64) -> Image {
    crate::denoisers::noise_from_clean(x_t, z, alpha_bar)
}

struct Chain {
    x: Image,
    map: StepMap,
}

fn run(
    problem: &Problem<'_>,
    backend: &mut dyn Denoiser,
    cfg: &SolverConfig,
    x_init: Option<&Image>,
) -> Result<RestorationResult> {
    cfg.validate()?;
    let Problem {
        y,
        op,
        sched,
        det,
        reference,
    } = *problem;
    ensure_shape(op.output_shape(), y.shape())?;
    if !y.is_finite() {
        return Err(Error::NonFinite("measurement"));
    }
    let shape = op.input_shape();
    if let Some(r) = reference {
        ensure_shape(shape, r.shape())?;
    }
    let steps = cfg.steps;
    let stochastic = cfg.tau > 0.0;
    let deterministic = cfg.tau < 1.0;

    let tprime: Vec<usize> = if deterministic {
        let det = det.ok_or_else(|| Error::param("det", "deterministic branch needs a noise-level schedule"))?;
        if det.steps() != steps {
            return Err(Error::param(
                "det",
                format!("{} levels for {steps} solver steps", det.steps()),
            ));
        }
        (1..=steps).map(|t| sched.lookup_tprime(det.at(t))).collect()
    } else {
        Vec::new()
    };

    let mut chain = if stochastic || cfg.renoise {
        let map = sched.step_map(steps)?;
        let x = match x_init {
            Some(x) => {
                ensure_shape(shape, x.shape())?;
                x.clone()
            }
            None => rng::gaussian_image(cfg.seed, Purpose::Init, 0, shape),
        };
        Some(Chain { x, map })
    } else {
        None
    };

    let limit = DIVERGENCE_FACTOR * (1.0 + y.norm());
    let red_w = cfg.red_weight();
    let mut z = op.adjoint(y)?;
    let mut trace = Vec::new();

    for t in (1..=steps).rev() {
        let resid = op.apply(&z)?.sub(y);
        let data_fidelity = resid.norm_sq();
        let grad = op.adjoint(&resid)?.scaled(2.0);

        let mut coupling = None;
        if stochastic {
            let c = chain.as_ref().expect("chain exists when tau > 0");
            let ti = c.map.index(t);
            let x0t = backend.denoise(&c.x, ti, sched)?;
            coupling = Some((cfg.coupling_weight(sched.sigma_bar(ti)), x0t));
        }
        let mut red = None;
        if deterministic {
            let fz = backend.denoise(&z, tprime[t - 1], sched)?;
            red = Some(fz);
        }

        let mut z_next = z.clone();
        {
            let zs = z.data();
            let g = grad.data();
            let cx = coupling.as_ref().map(|(w, x0)| (*w, x0.data()));
            let rf = red.as_ref().map(|f| f.data());
            for (i, out) in z_next.data_mut().iter_mut().enumerate() {
                let mut d = g[i];
                if let Some((w, x0)) = cx {
                    d += w * (zs[i] - x0[i]);
                }
                if let Some(f) = rf {
                    d += red_w * (zs[i] - f[i]);
                }
                *out = zs[i] - cfg.eta * d;
            }
        }

        let norm = z_next.norm();
        if !norm.is_finite() || norm > limit {
            return Err(Error::Divergence { step: t, norm });
        }

        if cfg.renoise {
            let c = chain.as_mut().expect("chain exists when renoising");
            let (ab, ab_prev) = (sched.alpha_bar(c.map.index(t)), sched.alpha_bar(c.map.index(t - 1)));
            let fresh = if cfg.zeta > 0.0 && ab_prev < 1.0 {
                Some(rng::gaussian_image(cfg.seed, Purpose::Renoise, t as u64, shape))
            } else {
                None
            };
            c.x = renoise(&c.x, &z_next, ab, ab_prev, cfg.zeta, fresh.as_ref());
            if !c.x.is_finite() {
                return Err(Error::Divergence { step: t, norm: c.x.norm() });
            }
        }

        if cfg.trace_every > 0 && (steps - t).is_multiple_of(cfg.trace_every) {
            trace.push(TraceRecord {
                step: t,
                data_fidelity,
                coupling_norm: coupling.as_ref().map(|(_, x0)| z.dist_sq(x0)),
                red_norm: red.as_ref().map(|f| z.dist_sq(f)),
                psnr: match reference {
                    Some(r) => Some(metrics::psnr(&z_next, r)?),
                    None => None,
                },
            });
        }
        z = z_next;
    }

    let x0 = match chain {
        Some(c) if cfg.renoise => c.x,
        _ => z,
    };
    Ok(RestorationResult { x0, trace })
}
