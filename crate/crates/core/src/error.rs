use alloc::string::String;

use crate::image::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: Shape, actual: Shape },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("iteration diverged at step {step} (norm {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("denoiser backend failed: {0}")]
    Backend(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Param {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_shape(expected: Shape, actual: Shape) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape { expected, actual })
    }
}
