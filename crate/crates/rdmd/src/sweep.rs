//! Grid of restorations over `lambda x tau`, run on a worker pool.

use std::io;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rdmd_core::metrics;
use rdmd_core::solver::restore;
use rdmd_core::{DetSchedule, ForwardOperator, Image, NoiseSchedule, Problem, SolverConfig};

use crate::config::{BackendOpenError, BackendSpec};
use crate::exit::Exit;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub tau: f64,
    pub metrics: Result<metrics::MetricReport, RowFailure>,
    pub runtime: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowFailure {
    pub exit: Exit,
    pub message: String,
}

impl RowFailure {
    fn core(e: rdmd_core::Error) -> Self {
        RowFailure {
            exit: Exit::of_core(&e),
            message: e.to_string(),
        }
    }
}

pub struct SweepInputs<'a> {
    pub y: &'a Image,
    pub op: &'a ForwardOperator,
    pub sched: &'a NoiseSchedule,
    pub det: &'a DetSchedule,
    pub reference: &'a Image,
    pub backend: &'a BackendSpec,
    pub base: SolverConfig,
}

/// One row per `(lambda, tau)`, lambda-major, in input order. Every row uses
/// the base seed, so duplicate grid points give identical rows. Failures are
/// kept in their row and the other rows still run.
pub fn run_sweep(inputs: &SweepInputs<'_>, lambdas: &[f64], taus: &[f64], threads: usize) -> io::Result<Vec<SweepRow>> {
    let grid: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| taus.iter().map(move |&t| (l, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(io::Error::other)?;
    Ok(pool.install(|| grid.par_iter().map(|&(lambda, tau)| run_row(inputs, lambda, tau)).collect()))
}

fn run_row(inputs: &SweepInputs<'_>, lambda: f64, tau: f64) -> SweepRow {
    let start = Instant::now();
    let cfg = SolverConfig {
        lambda,
        tau,
        trace_every: 0,
        ..inputs.base
    };
    let metrics = (|| {
        let mut backend = inputs.backend.open().map_err(|e| RowFailure {
            exit: match e {
                BackendOpenError::Config(_) => Exit::Usage,
                BackendOpenError::Connect { .. } => Exit::Backend,
            },
            message: e.to_string(),
        })?;
        let problem = Problem::new(inputs.y, inputs.op, inputs.sched).with_det(inputs.det);
        let out = restore(&problem, &mut backend, &cfg).map_err(RowFailure::core)?;
        metrics::report(&out.x0.clamped(0.0, 1.0), inputs.reference).map_err(RowFailure::core)
    })();
    SweepRow {
        lambda,
        tau,
        metrics,
        runtime: start.elapsed(),
    }
}

/// `lambda,tau,psnr,ssim,mse,error`, plus `runtime_s` when asked for. Runtime
/// is off by default because it is the only column that differs between runs.
pub fn write_csv(w: impl io::Write, rows: &[SweepRow], with_runtime: bool) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["lambda", "tau", "psnr", "ssim", "mse", "error"];
    if with_runtime {
        header.push("runtime_s");
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.lambda.to_string(), r.tau.to_string()];
        match &r.metrics {
            Ok(m) => rec.extend([m.psnr.to_string(), m.ssim.to_string(), m.mse.to_string(), String::new()]),
            Err(e) => rec.extend([String::new(), String::new(), String::new(), e.message.clone()]),
        }
        if with_runtime {
            rec.push(format!("{:.6}", r.runtime.as_secs_f64()));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Whitespace table of `tau psnr ssim`, one block per lambda separated by blank lines.
pub fn write_scatter(mut w: impl io::Write, rows: &[SweepRow]) -> io::Result<()> {
    let mut current = None;
    for r in rows {
        if current != Some(r.lambda.to_bits()) {
            if current.is_some() {
                writeln!(w)?;
                writeln!(w)?;
            }
            writeln!(w, "# lambda={}", r.lambda)?;
            writeln!(w, "# tau psnr ssim")?;
            current = Some(r.lambda.to_bits());
        }
        if let Ok(m) = &r.metrics {
            writeln!(w, "{} {} {}", r.tau, m.psnr, m.ssim)?;
        }
    }
    Ok(())
}
