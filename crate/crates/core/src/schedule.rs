//! Diffusion noise schedules and the deterministic-branch noise levels.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Cumulative tables of a discrete diffusion process with `T` steps.
///
/// Step indices are 1-based; index 0 denotes the clean signal, with
/// `alpha_bar(0) == 1` and `sigma_bar(0) == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced `beta` from `beta_start` to `beta_end` over `steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("T", "step count must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start < 1.0) {
            return Err(Error::param("beta_start", format!("{beta_start} is outside (0, 1)")));
        }
        if !(beta_end > 0.0 && beta_end < 1.0) {
            return Err(Error::param("beta_end", format!("{beta_end} is outside (0, 1)")));
        }
        // A single step has nothing to ascend over; equal endpoints are fine there.
        if beta_end < beta_start || (steps > 1 && beta_end == beta_start) {
            return Err(Error::param(
                "beta_end",
                format!("{beta_end} must exceed beta_start {beta_start}"),
            ));
        }
        let betas = if steps == 1 {
            alloc::vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            let last = (steps - 1) as f64;
            (0..steps)
                .map(|i| {
                    if i + 1 == steps {
                        beta_end
                    } else {
                        beta_start + span * (i as f64 / last)
                    }
                })
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Builds the cumulative tables from an explicit strictly ascending `beta` sequence.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("beta", "schedule must have at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::param("beta", format!("{b} is outside (0, 1)")));
        }
        if betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("beta", "sequence must be strictly ascending"));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0f64;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let sigma_bar = alpha_bar
            .iter()
            .map(|&a| libm::sqrt((1.0 - a) / a))
            .collect();
        Ok(NoiseSchedule {
            betas,
            alpha_bar,
            sigma_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_bar_t` for `t` in `0..=T`.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Equivalent denoising noise level `sqrt((1 - alpha_bar_t) / alpha_bar_t)`.
    #[inline]
    pub fn sigma_bar(&self, t: usize) -> f64 {
        self.sigma_bar[t]
    }

    pub fn sigma_bars(&self) -> &[f64] {
        &self.sigma_bar
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::param(
                "t",
                format!("step {t} outside [1, {}]", self.steps()),
            ))
        } else {
            Ok(())
        }
    }

    /// Index `i` in `1..=T` whose `sigma_bar(i)` is nearest to `sigma`.
    ///
    /// Ties resolve to the smaller index.
    pub fn lookup_tprime(&self, sigma: f64) -> usize {
        let levels = &self.sigma_bar[1..];
        let above = levels.partition_point(|&s| s < sigma);
        if above == 0 {
            return 1;
        }
        if above == levels.len() {
            return levels.len();
        }
        let below_gap = sigma - levels[above - 1];
        let above_gap = levels[above] - sigma;
        if below_gap <= above_gap {
            above
        } else {
            above + 1
        }
    }

    /// Uniform map from `solve_steps` solver steps onto this schedule.
    pub fn step_map(&self, solve_steps: usize) -> Result<StepMap> {
        StepMap::uniform(self.steps(), solve_steps)
    }
}

/// Training-schedule index used at each solver step.
///
/// `index(k)` for `k` in `0..=T_solve` is `round(k * T_train / T_solve)`, so
/// `index(0) == 0` and `index(T_solve) == T_train`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepMap {
    indices: Vec<usize>,
}

impl StepMap {
    pub fn uniform(train_steps: usize, solve_steps: usize) -> Result<Self> {
        if solve_steps == 0 {
            return Err(Error::param("T_solve", "must be at least 1"));
        }
        if solve_steps > train_steps {
            return Err(Error::param(
                "T_solve",
                format!("{solve_steps} solver steps exceed the {train_steps}-step schedule"),
            ));
        }
        let (tt, ts) = (train_steps as u128, solve_steps as u128);
        let indices = (0..=ts)
            .map(|k| ((2 * k * tt + ts) / (2 * ts)) as usize)
            .collect();
        Ok(StepMap { indices })
    }

    pub fn solve_steps(&self) -> usize {
        self.indices.len() - 1
    }

    #[inline]
    pub fn index(&self, k: usize) -> usize {
        self.indices[k]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetMode {
    /// Geometric decay from `sigma_max` at the first solver step to `sigma_min` at the last.
    LogSpaced { sigma_max: f64, sigma_min: f64 },
    Constant { sigma: f64 },
}

impl DetMode {
    /// `log_spaced(0.2, max(sigma_n, 0.01))`, widened if `sigma_n` exceeds 0.2.
    pub fn default_for_noise(sigma_n: f64) -> Self {
        let sigma_min = sigma_n.max(0.01);
        DetMode::LogSpaced {
            sigma_max: sigma_min.max(0.2),
            sigma_min,
        }
    }
}

/// Noise levels `sigma'_t` fed to the deterministic branch, one per solver step.
#[derive(Debug, Clone, PartialEq)]
pub struct DetSchedule {
    mode: DetMode,
    /// Entry `t - 1` holds `sigma'_t`.
    levels: Vec<f64>,
}

impl DetSchedule {
    pub fn new(steps: usize, mode: DetMode) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("T_solve", "must be at least 1"));
        }
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} must be positive")))
            }
        };
        let levels = match mode {
            DetMode::Constant { sigma } => {
                positive("sigma", sigma)?;
                alloc::vec![sigma; steps]
            }
            DetMode::LogSpaced {
                sigma_max,
                sigma_min,
            } => {
                positive("sigma_max", sigma_max)?;
                positive("sigma_min", sigma_min)?;
                if sigma_max < sigma_min {
                    return Err(Error::param(
                        "sigma_max",
                        format!("{sigma_max} is below sigma_min {sigma_min}"),
                    ));
                }
                let (lo, hi) = (libm::log(sigma_min), libm::log(sigma_max));
                (1..=steps)
                    .map(|t| {
                        if t == 1 || sigma_max == sigma_min {
                            sigma_min
                        } else if t == steps {
                            sigma_max
                        } else {
                            let frac = (steps - t) as f64 / (steps - 1) as f64;
                            libm::exp(hi + frac * (lo - hi))
                        }
                    })
                    .collect()
            }
        };
        Ok(DetSchedule { mode, levels })
    }

    pub fn mode(&self) -> DetMode {
        self.mode
    }

    pub fn steps(&self) -> usize {
        self.levels.len()
    }

    /// `sigma'_t` for solver step `t` in `1..=T`.
    #[inline]
    pub fn at(&self, t: usize) -> f64 {
        self.levels[t - 1]
    }

    /// Levels in execution order, `t = T` first.
    pub fn in_solver_order(&self) -> impl Iterator<Item = f64> + '_ {
        self.levels.iter().rev().copied()
    }
}

/// Everything needed to rebuild both schedules of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T_train")]
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(rename = "T_solve")]
    pub solve_steps: usize,
    pub det: DetMode,
}

impl ScheduleConfig {
    pub fn with_defaults(solve_steps: usize, sigma_n: f64) -> Self {
        ScheduleConfig {
            train_steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            solve_steps,
            det: DetMode::default_for_noise(sigma_n),
        }
    }

    pub fn build(&self) -> Result<(NoiseSchedule, DetSchedule)> {
        let sched = NoiseSchedule::linear(self.train_steps, self.beta_start, self.beta_end)?;
        let det = DetSchedule::new(self.solve_steps, self.det)?;
        Ok((sched, det))
    }
}
