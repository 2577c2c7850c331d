//! File formats, the external denoiser protocol and the command-line tools
//! built on [`rdmd_core`].

pub mod imgio;
pub mod kernels;
pub mod protocol;
pub mod echo;
pub mod extern_backend;
pub mod config;
pub mod sweep;
pub mod trace;
pub mod exit;
pub mod selfcheck;
pub mod cli;
