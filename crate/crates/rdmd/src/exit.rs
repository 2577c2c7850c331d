//! Process exit codes shared by the command-line tools.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    /// Bad flags, invalid configuration, inconsistent shapes, failed checks.
    Usage = 2,
    Io = 3,
    Divergence = 4,
    /// External backend or protocol failure.
    Backend = 5,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn of_core(e: &rdmd_core::Error) -> Exit {
        match e {
            rdmd_core::Error::Divergence { .. } => Exit::Divergence,
            rdmd_core::Error::Backend(_) => Exit::Backend,
            _ => Exit::Usage,
        }
    }
}
