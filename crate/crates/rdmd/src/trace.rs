//! CSV output for solver traces and parameter sweeps.
//!
//! Floats are written in Rust's shortest round-trip form, so equal runs give
//! equal bytes. Missing values are empty cells.

use std::io;
use std::path::Path;

use rdmd_core::TraceRecord;

pub const TRACE_HEADER: [&str; 5] = ["t", "data_fidelity", "coupling_norm", "red_norm", "psnr"];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace(w: impl io::Write, trace: &[TraceRecord]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for r in trace {
        out.write_record([
            r.step.to_string(),
            r.data_fidelity.to_string(),
            cell(r.coupling_norm),
            cell(r.red_norm),
            cell(r.psnr),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_trace(path: &Path, trace: &[TraceRecord]) -> csv::Result<()> {
    write_trace(std::fs::File::create(path)?, trace)
}

/// Parsed trace row, for reading traces back.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub data_fidelity: f64,
    pub coupling_norm: Option<f64>,
    pub red_norm: Option<f64>,
    pub psnr: Option<f64>,
}

pub fn read_trace(r: impl io::Read) -> csv::Result<Vec<TraceRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}
