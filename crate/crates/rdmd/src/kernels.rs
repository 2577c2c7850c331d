//! Plain-text blur kernels: a `H W` line followed by `H * W` whitespace-separated taps.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rdmd_core::operators::Kernel;

#[derive(Debug, thiserror::Error)]
pub enum KernelFileError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },
}

pub fn parse_kernel(text: &str) -> Result<Kernel, String> {
    let mut tokens = text.split_whitespace();
    let mut dim = |name| -> Result<usize, String> {
        let tok = tokens.next().ok_or_else(|| format!("missing {name}"))?;
        tok.parse().map_err(|_| format!("{name} {tok:?} is not a size"))
    };
    let (h, w) = (dim("height")?, dim("width")?);
    let taps = tokens
        .map(|t| t.parse::<f64>().map_err(|_| format!("tap {t:?} is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if taps.len() != h * w {
        return Err(format!("{} taps for a {h}x{w} kernel", taps.len()));
    }
    Kernel::new(h, w, taps).map_err(|e| e.to_string())
}

pub fn format_kernel(k: &Kernel) -> String {
    let mut out = format!("{} {}\n", k.height(), k.width());
    for row in k.taps().chunks(k.width()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn read_kernel(path: &Path) -> Result<Kernel, KernelFileError> {
    let text = fs::read_to_string(path).map_err(|source| KernelFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_kernel(&text).map_err(|reason| KernelFileError::Malformed {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_kernel(k: &Kernel, path: &Path) -> Result<(), KernelFileError> {
    fs::write(path, format_kernel(k)).map_err(|source| KernelFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}
