//! Run configuration: one JSON document describing a complete restoration.
//!
//! Precedence is built-in defaults, then the config file, then command-line
//! flags. Every command writes the resolved document next to its outputs, and
//! feeding that document back reproduces the run.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rdmd_core::operators::{gaussian_kernel, motion_kernel, Kernel, PixelMask};
use rdmd_core::schedule::{DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_STEPS};
use rdmd_core::{
    DctShrinkDenoiser, DetMode, DetSchedule, Denoiser, ForwardOperator, NoiseSchedule, PriorSpectrum, ScheduleConfig,
    Shape, SolverConfig, WienerDenoiser,
};
use serde::{Deserialize, Serialize};

use crate::extern_backend::{Endpoint, ExternBackend, ExternOptions};
use crate::imgio;
use crate::kernels;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] rdmd_core::Error),
    #[error(transparent)]
    Image(#[from] imgio::ImageError),
    #[error(transparent)]
    Kernel(#[from] kernels::KernelFileError),
}

/// Degradation operator. Blur kernels are normalized before use.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    #[default]
    Identity,
    BlurGauss { size: usize, std: f64 },
    BlurMotion { size: usize, length: f64, angle: f64 },
    BlurFile { path: PathBuf },
    Sr { scale: usize },
    /// Observed where the mask image exceeds one half.
    Mask { path: PathBuf },
    RandomMask { keep: f64, seed: u64 },
}

impl OperatorSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            OperatorSpec::Identity => "identity",
            OperatorSpec::BlurGauss { .. } => "blur-gauss",
            OperatorSpec::BlurMotion { .. } => "blur-motion",
            OperatorSpec::BlurFile { .. } => "blur-file",
            OperatorSpec::Sr { .. } => "sr",
            OperatorSpec::Mask { .. } => "mask",
            OperatorSpec::RandomMask { .. } => "random-mask",
        }
    }

    pub fn kernel(&self) -> Result<Option<Kernel>, ConfigError> {
        let k = match self {
            OperatorSpec::BlurGauss { size, std } => gaussian_kernel(*size, *std)?,
            OperatorSpec::BlurMotion { size, length, angle } => motion_kernel(*size, *length, *angle)?,
            OperatorSpec::BlurFile { path } => kernels::read_kernel(path)?.normalized()?,
            _ => return Ok(None),
        };
        Ok(Some(k))
    }

    /// Shape of the clean image that produces a measurement of shape `y`.
    pub fn input_shape_for(&self, y: Shape) -> Shape {
        match self {
            OperatorSpec::Sr { scale } => Shape::new(y.channels, y.height * scale, y.width * scale),
            _ => y,
        }
    }

    pub fn build(&self, input: Shape) -> Result<ForwardOperator, ConfigError> {
        if let Some(k) = self.kernel()? {
            return Ok(ForwardOperator::blur(k, input));
        }
        Ok(match self {
            OperatorSpec::Identity => ForwardOperator::identity(input),
            OperatorSpec::Sr { scale } => ForwardOperator::downsample(*scale, input)?,
            OperatorSpec::Mask { path } => {
                let m = imgio::read_image(path)?;
                if (m.shape().height, m.shape().width) != (input.height, input.width) {
                    return Err(ConfigError::Invalid(format!(
                        "mask {} is {}, image is {input}",
                        path.display(),
                        m.shape()
                    )));
                }
                let keep = m.plane(0).iter().map(|&v| v > 0.5).collect();
                ForwardOperator::mask(PixelMask::new(input, keep)?)
            }
            OperatorSpec::RandomMask { keep, seed } => ForwardOperator::mask(PixelMask::random(input, *keep, *seed)?),
            OperatorSpec::BlurGauss { .. } | OperatorSpec::BlurMotion { .. } | OperatorSpec::BlurFile { .. } => {
                unreachable!("blur kernels handled above")
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Wiener {
        spectrum: PriorSpectrum,
    },
    DctShrink {
        block: usize,
        threshold_scale: f64,
    },
    /// A shell command speaking the wire protocol on stdio, or `tcp:<host:port>`.
    Extern {
        endpoint: String,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
        #[serde(default)]
        verify_handshake: bool,
    },
}

fn default_timeout_s() -> f64 {
    crate::extern_backend::DEFAULT_TIMEOUT.as_secs_f64()
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Wiener {
            spectrum: rdmd_core::testbed::Testbed::spectrum(),
        }
    }
}

impl BackendSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::Wiener { .. } => "wiener",
            BackendSpec::DctShrink { .. } => "dct",
            BackendSpec::Extern { .. } => "extern",
        }
    }

    /// Opens a fresh backend; external ones get their own connection.
    pub fn open(&self) -> Result<Box<dyn Denoiser + Send>, BackendOpenError> {
        Ok(match self {
            BackendSpec::Wiener { spectrum } => Box::new(WienerDenoiser::new(spectrum.clone())?),
            BackendSpec::DctShrink { block, threshold_scale } => {
                Box::new(DctShrinkDenoiser::new(*block, *threshold_scale)?)
            }
            BackendSpec::Extern {
                endpoint,
                timeout_s,
                verify_handshake,
            } => {
                if !(*timeout_s > 0.0 && timeout_s.is_finite()) {
                    return Err(rdmd_core::Error::Param {
                        name: "timeout_s",
                        reason: format!("{timeout_s} must be positive"),
                    }
                    .into());
                }
                let opts = ExternOptions {
                    timeout: Duration::from_secs_f64(*timeout_s),
                    verify_handshake: *verify_handshake,
                };
                let ep = Endpoint::parse(endpoint);
                Box::new(ExternBackend::connect(ep.clone(), opts).map_err(|e| BackendOpenError::Connect {
                    endpoint: ep.to_string(),
                    source: e,
                })?)
            }
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendOpenError {
    #[error(transparent)]
    Config(#[from] rdmd_core::Error),
    #[error("cannot reach {endpoint}: {source}")]
    Connect {
        endpoint: String,
        source: crate::protocol::ProtocolError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    #[serde(rename = "T_train")]
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Deterministic-branch levels; derived from `sigma_n` when absent.
    pub det: Option<DetMode>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            train_steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            det: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub operator: OperatorSpec,
    pub backend: BackendSpec,
    pub schedule: ScheduleSpec,
    pub solver: SolverConfig,
    /// Measurement image (restore, sweep) or clean image (degrade).
    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_json()).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Fills derived fields so the document no longer depends on defaults.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.schedule.det.get_or_insert(DetMode::default_for_noise(self.solver.sigma_n));
        out
    }

    pub fn schedule_config(&self) -> ScheduleConfig {
        let s = self.resolved().schedule;
        ScheduleConfig {
            train_steps: s.train_steps,
            beta_start: s.beta_start,
            beta_end: s.beta_end,
            solve_steps: self.solver.steps,
            det: s.det.expect("resolved"),
        }
    }

    pub fn build_schedules(&self) -> Result<(NoiseSchedule, DetSchedule), ConfigError> {
        self.solver.validate()?;
        let cfg = self.schedule_config();
        if cfg.solve_steps > cfg.train_steps {
            return Err(ConfigError::Invalid(format!(
                "T_solve {} exceeds T_train {}",
                cfg.solve_steps, cfg.train_steps
            )));
        }
        Ok(cfg.build()?)
    }
}
