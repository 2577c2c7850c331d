//! Zero-shot image restoration with a single noise predictor used twice:
//! as a stochastic diffusion sampler and as a deterministic
//! regularization-by-denoising prior, coupled through half-quadratic splitting.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the external
//! denoiser protocol and the command line live in the `rdmd` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod denoisers;
pub mod error;
pub mod fft;
pub mod image;
pub mod metrics;
pub mod operators;
pub mod rng;
pub mod schedule;
pub mod solver;
pub mod testbed;

pub use denoisers::{DctShrinkDenoiser, Denoiser, PriorSpectrum, WienerDenoiser};
pub use error::{Error, Result};
pub use image::{Image, Shape};
pub use operators::{ForwardOperator, Kernel};
pub use schedule::{DetMode, DetSchedule, NoiseSchedule, ScheduleConfig, StepMap};
pub use solver::{Problem, RestorationResult, SolverConfig, TraceRecord};
