//! `rdmd` subcommands.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rdmd_core::operators::degrade;
use rdmd_core::solver::restore;
use rdmd_core::{metrics, DetMode, Image, PriorSpectrum, Problem};

use crate::config::{BackendOpenError, BackendSpec, ConfigError, OperatorSpec, RunConfig};
use crate::exit::Exit;
use crate::imgio::{self, ImageError};
use crate::kernels;
use crate::selfcheck::{run_checks, SelfcheckOptions};
use crate::sweep::{run_sweep, write_csv, write_scatter, SweepInputs};
use crate::trace::save_trace;

#[derive(Debug, Parser)]
#[command(name = "rdmd", version, about = "Image restoration with a dual-regularized diffusion solver")]
pub struct Cli {
    /// Worker threads for sweeps and self-checks [default: available cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a measurement y = A x + noise.
    Degrade(DegradeArgs),
    /// Restore an image from a measurement.
    Restore(RestoreArgs),
    /// Restore over a grid of tau (and lambda) values and tabulate the metrics.
    Sweep(SweepArgs),
    /// Run the built-in invariant checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OpKind {
    Identity,
    BlurGauss,
    BlurMotion,
    BlurFile,
    Sr,
    Mask,
    RandomMask,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OperatorArgs {
    /// Degradation operator
    #[arg(long, value_enum)]
    pub op: Option<OpKind>,
    /// Downsampling factor for `sr` [default: 4]
    #[arg(long)]
    pub scale: Option<usize>,
    /// Kernel size for blur operators [default: 61 gaussian, 31 motion]
    #[arg(long)]
    pub size: Option<usize>,
    /// Gaussian blur standard deviation in pixels [default: 3.0]
    #[arg(long)]
    pub std: Option<f64>,
    /// Motion blur length in pixels [default: 15]
    #[arg(long)]
    pub length: Option<f64>,
    /// Motion blur angle in degrees, counter-clockwise [default: 0]
    #[arg(long, allow_negative_numbers = true)]
    pub angle: Option<f64>,
    /// Kernel text file for `blur-file`
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Mask image for `mask`; pixels above one half are observed
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Observed fraction for `random-mask` [default: 0.5]
    #[arg(long)]
    pub keep: Option<f64>,
    /// Seed of the random mask [default: 0]
    #[arg(long)]
    pub mask_seed: Option<u64>,
}

impl OperatorArgs {
    /// Applies the flags on top of `base`. Parameters not given keep their
    /// value from `base` when the kind is unchanged, else take the defaults.
    pub fn apply(&self, base: &OperatorSpec) -> Result<OperatorSpec, String> {
        let kind = self.op.unwrap_or(match base {
            OperatorSpec::Identity => OpKind::Identity,
            OperatorSpec::BlurGauss { .. } => OpKind::BlurGauss,
            OperatorSpec::BlurMotion { .. } => OpKind::BlurMotion,
            OperatorSpec::BlurFile { .. } => OpKind::BlurFile,
            OperatorSpec::Sr { .. } => OpKind::Sr,
            OperatorSpec::Mask { .. } => OpKind::Mask,
            OperatorSpec::RandomMask { .. } => OpKind::RandomMask,
        });
        let mut used = Vec::new();
        let spec = match kind {
            OpKind::Identity => OperatorSpec::Identity,
            OpKind::BlurGauss => {
                let (size0, std0) = match base {
                    OperatorSpec::BlurGauss { size, std } => (*size, *std),
                    _ => (61, 3.0),
                };
                used.extend(["size", "std"]);
                OperatorSpec::BlurGauss {
                    size: self.size.unwrap_or(size0),
                    std: self.std.unwrap_or(std0),
                }
            }
            OpKind::BlurMotion => {
                let (size0, length0, angle0) = match base {
                    OperatorSpec::BlurMotion { size, length, angle } => (*size, *length, *angle),
                    _ => (31, 15.0, 0.0),
                };
                used.extend(["size", "length", "angle"]);
                OperatorSpec::BlurMotion {
                    size: self.size.unwrap_or(size0),
                    length: self.length.unwrap_or(length0),
                    angle: self.angle.unwrap_or(angle0),
                }
            }
            OpKind::BlurFile => {
                used.push("kernel");
                let path = match (&self.kernel, base) {
                    (Some(p), _) => p.clone(),
                    (None, OperatorSpec::BlurFile { path }) => path.clone(),
                    _ => return Err("--op blur-file needs --kernel".into()),
                };
                OperatorSpec::BlurFile { path }
            }
            OpKind::Sr => {
                used.push("scale");
                let scale0 = match base {
                    OperatorSpec::Sr { scale } => *scale,
                    _ => 4,
                };
                OperatorSpec::Sr {
                    scale: self.scale.unwrap_or(scale0),
                }
            }
            OpKind::Mask => {
                used.push("mask");
                let path = match (&self.mask, base) {
                    (Some(p), _) => p.clone(),
                    (None, OperatorSpec::Mask { path }) => path.clone(),
                    _ => return Err("--op mask needs --mask".into()),
                };
                OperatorSpec::Mask { path }
            }
            OpKind::RandomMask => {
                used.extend(["keep", "mask-seed"]);
                let (keep0, seed0) = match base {
                    OperatorSpec::RandomMask { keep, seed } => (*keep, *seed),
                    _ => (0.5, 0),
                };
                OperatorSpec::RandomMask {
                    keep: self.keep.unwrap_or(keep0),
                    seed: self.mask_seed.unwrap_or(seed0),
                }
            }
        };
        let given = [
            ("scale", self.scale.is_some()),
            ("size", self.size.is_some()),
            ("std", self.std.is_some()),
            ("length", self.length.is_some()),
            ("angle", self.angle.is_some()),
            ("kernel", self.kernel.is_some()),
            ("mask", self.mask.is_some()),
            ("keep", self.keep.is_some()),
            ("mask-seed", self.mask_seed.is_some()),
        ];
        for (flag, set) in given {
            if set && !used.contains(&flag) {
                return Err(format!("--{flag} does not apply to operator {}", spec.kind()));
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// Regularization strength lambda
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Share of regularization on the stochastic branch, in [0, 1]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Fresh-noise fraction when renoising, in [0, 1]
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Gradient step size
    #[arg(long)]
    pub eta: Option<f64>,
    /// Measurement noise standard deviation
    #[arg(long)]
    pub sigma_n: Option<f64>,
    /// Solver steps T_solve
    #[arg(long)]
    pub steps: Option<usize>,
    /// Seed for every random draw of the run
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trace every n-th step; 0 disables the trace
    #[arg(long)]
    pub trace_every: Option<usize>,
    /// Iterate z only and return it, without the sampler chain
    #[arg(long)]
    pub no_renoise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetKind {
    LogSpaced,
    Constant,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScheduleArgs {
    /// Training schedule length T_train
    #[arg(long)]
    pub t_train: Option<usize>,
    /// First beta of the linear training schedule [default: 1e-4]
    #[arg(long)]
    pub beta_start: Option<f64>,
    /// Last beta of the linear training schedule [default: 0.02]
    #[arg(long)]
    pub beta_end: Option<f64>,
    /// Deterministic-branch noise levels [default: log-spaced from max(0.2, sigma_min) down to max(sigma_n, 0.01)]
    #[arg(long, value_enum)]
    pub det_mode: Option<DetKind>,
    #[arg(long)]
    pub det_sigma_max: Option<f64>,
    #[arg(long)]
    pub det_sigma_min: Option<f64>,
    /// Level for `--det-mode constant`
    #[arg(long)]
    pub det_sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// `wiener`, `dct`, or `extern:<command>` (use `extern:tcp:<host:port>` for a server)
    #[arg(long)]
    pub backend: Option<String>,
    /// Wiener prior variance [default: 1.0]
    #[arg(long)]
    pub prior_variance: Option<f64>,
    /// Wiener prior smoothness rho; 0 gives a white prior [default: 400]
    #[arg(long)]
    pub prior_rho: Option<f64>,
    /// DCT block size [default: 8]
    #[arg(long)]
    pub dct_block: Option<usize>,
    /// DCT threshold as a multiple of the noise level [default: 1.0]
    #[arg(long)]
    pub dct_threshold: Option<f64>,
    /// Seconds to wait for each external response [default: 30]
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Check the external server's schedule before restoring
    #[arg(long)]
    pub verify_handshake: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DegradeArgs {
    /// JSON run config supplying the operator, sigma_n and seed
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub operator: OperatorArgs,
    /// Noise standard deviation [default: 0.05]
    #[arg(long)]
    pub sigma_n: Option<f64>,
    /// Seed of the measurement noise [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clean image
    pub input: PathBuf,
    /// Measurement to write; a `.json` config and, for blurs, a `.kernel.txt` go next to it
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run config; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub operator: OperatorArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Ground truth for PSNR/SSIM
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Measurement image [default: `input` from the config]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RestoreArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Directory for the restored image, trace.csv and config.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// File name of the restored image; the extension picks the format
    #[arg(long, default_value = "restored.png")]
    pub output_name: String,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated tau values
    #[arg(long, value_delimiter = ',', required = true)]
    pub taus: Vec<f64>,
    /// Comma-separated lambda values [default: the configured lambda]
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    /// CSV table to write; the resolved config goes next to it as `.json`
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a whitespace-separated `tau psnr ssim` file for plotting
    #[arg(long)]
    pub scatter: Option<PathBuf>,
    /// Add a wall-clock `runtime_s` column (makes the CSV differ between runs)
    #[arg(long)]
    pub runtime: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SelfcheckArgs {
    /// Test hook: scale the blur kernel off unit sum before checking
    #[arg(long)]
    pub corrupt_kernel: bool,
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            exit: Exit::Usage,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let exit = match &e {
            ConfigError::Io { .. } | ConfigError::Image(_) | ConfigError::Kernel(kernels::KernelFileError::Io { .. }) => {
                Exit::Io
            }
            ConfigError::Core(c) => Exit::of_core(c),
            _ => Exit::Usage,
        };
        CliError {
            exit,
            message: e.to_string(),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        CliError {
            exit: Exit::Io,
            message: e.to_string(),
        }
    }
}

impl From<rdmd_core::Error> for CliError {
    fn from(e: rdmd_core::Error) -> Self {
        CliError {
            exit: Exit::of_core(&e),
            message: e.to_string(),
        }
    }
}

impl From<BackendOpenError> for CliError {
    fn from(e: BackendOpenError) -> Self {
        match e {
            BackendOpenError::Config(c) => c.into(),
            e @ BackendOpenError::Connect { .. } => CliError {
                exit: Exit::Backend,
                message: e.to_string(),
            },
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError {
        exit: Exit::Io,
        message: format!("{}: {e}", path.display()),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match execute(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.exit.code()
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<u8, CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::usage("--threads must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    match &cli.command {
        Command::Degrade(a) => cmd_degrade(a, stdout),
        Command::Restore(a) => cmd_restore(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, threads, stdout),
        Command::Selfcheck(a) => cmd_selfcheck(a, threads, stdout),
    }
}

fn load_base(path: Option<&Path>) -> Result<RunConfig, CliError> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn apply_solver(cfg: &mut RunConfig, a: &SolverArgs) {
    let s = &mut cfg.solver;
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => {$(if let Some(v) = a.$flag { s.$field = v; })*};
    }
    set!(lambda <- lambda, tau <- tau, zeta <- zeta, eta <- eta, sigma_n <- sigma_n,
         steps <- steps, seed <- seed, trace_every <- trace_every);
    if a.no_renoise {
        s.renoise = false;
    }
}

fn apply_schedule(cfg: &mut RunConfig, a: &ScheduleArgs) -> Result<(), CliError> {
    let s = &mut cfg.schedule;
    if let Some(v) = a.t_train {
        s.train_steps = v;
    }
    if let Some(v) = a.beta_start {
        s.beta_start = v;
    }
    if let Some(v) = a.beta_end {
        s.beta_end = v;
    }
    let log_flags = a.det_sigma_max.is_some() || a.det_sigma_min.is_some();
    let mode = a.det_mode.or(match s.det {
        _ if log_flags => Some(DetKind::LogSpaced),
        _ if a.det_sigma.is_some() => Some(DetKind::Constant),
        _ => None,
    });
    match mode {
        None => {}
        Some(DetKind::Constant) => {
            if log_flags {
                return Err(CliError::usage("--det-sigma-max/--det-sigma-min need --det-mode log-spaced"));
            }
            let prev = match s.det {
                Some(DetMode::Constant { sigma }) => Some(sigma),
                _ => None,
            };
            let sigma = a
                .det_sigma
                .or(prev)
                .ok_or_else(|| CliError::usage("--det-mode constant needs --det-sigma"))?;
            s.det = Some(DetMode::Constant { sigma });
        }
        Some(DetKind::LogSpaced) => {
            if a.det_sigma.is_some() {
                return Err(CliError::usage("--det-sigma needs --det-mode constant"));
            }
            let (max0, min0) = match s.det.unwrap_or(DetMode::default_for_noise(cfg.solver.sigma_n)) {
                DetMode::LogSpaced { sigma_max, sigma_min } => (sigma_max, sigma_min),
                DetMode::Constant { .. } => match DetMode::default_for_noise(cfg.solver.sigma_n) {
                    DetMode::LogSpaced { sigma_max, sigma_min } => (sigma_max, sigma_min),
                    DetMode::Constant { sigma } => (sigma, sigma),
                },
            };
            s.det = Some(DetMode::LogSpaced {
                sigma_max: a.det_sigma_max.unwrap_or(max0),
                sigma_min: a.det_sigma_min.unwrap_or(min0),
            });
        }
    }
    Ok(())
}

fn apply_backend(cfg: &mut RunConfig, a: &BackendArgs) -> Result<(), CliError> {
    let kind = match a.backend.as_deref() {
        None => None,
        Some("wiener") => Some("wiener"),
        Some("dct") | Some("dct_shrink") | Some("dct-shrink") => Some("dct"),
        Some(s) if s.starts_with("extern:") => Some("extern"),
        Some(other) => return Err(CliError::usage(format!("unknown backend {other:?}"))),
    };
    let kind = kind.unwrap_or(cfg.backend.kind());
    let prior_flags = a.prior_variance.is_some() || a.prior_rho.is_some();
    let dct_flags = a.dct_block.is_some() || a.dct_threshold.is_some();
    let extern_flags = a.timeout.is_some() || a.verify_handshake;
    let stray = match kind {
        "wiener" => dct_flags || extern_flags,
        "dct" => prior_flags || extern_flags,
        _ => prior_flags || dct_flags,
    };
    if stray {
        return Err(CliError::usage(format!("backend flags do not match backend {kind}")));
    }
    cfg.backend = match kind {
        "wiener" => {
            let (v0, r0) = match &cfg.backend {
                BackendSpec::Wiener {
                    spectrum: PriorSpectrum::Smooth { variance, rho },
                } => (*variance, *rho),
                BackendSpec::Wiener {
                    spectrum: PriorSpectrum::White { variance },
                } => (*variance, 0.0),
                // an explicit spectrum stays as is unless prior flags replace it
                BackendSpec::Wiener { .. } if !prior_flags => return Ok(()),
                _ => (rdmd_core::testbed::PRIOR_VARIANCE, rdmd_core::testbed::PRIOR_RHO),
            };
            let (variance, rho) = (a.prior_variance.unwrap_or(v0), a.prior_rho.unwrap_or(r0));
            let spectrum = if rho == 0.0 {
                PriorSpectrum::White { variance }
            } else {
                PriorSpectrum::Smooth { variance, rho }
            };
            BackendSpec::Wiener { spectrum }
        }
        "dct" => {
            let (b0, t0) = match &cfg.backend {
                BackendSpec::DctShrink { block, threshold_scale } => (*block, *threshold_scale),
                _ => (rdmd_core::DctShrinkDenoiser::DEFAULT_BLOCK, 1.0),
            };
            BackendSpec::DctShrink {
                block: a.dct_block.unwrap_or(b0),
                threshold_scale: a.dct_threshold.unwrap_or(t0),
            }
        }
        _ => {
            let (e0, t0, v0) = match &cfg.backend {
                BackendSpec::Extern {
                    endpoint,
                    timeout_s,
                    verify_handshake,
                } => (Some(endpoint.clone()), *timeout_s, *verify_handshake),
                _ => (None, crate::extern_backend::DEFAULT_TIMEOUT.as_secs_f64(), false),
            };
            let endpoint = a
                .backend
                .as_deref()
                .and_then(|s| s.strip_prefix("extern:"))
                .map(str::to_string)
                .or(e0)
                .ok_or_else(|| CliError::usage("extern backend needs a command"))?;
            if endpoint.trim().is_empty() {
                return Err(CliError::usage("extern backend needs a command"));
            }
            BackendSpec::Extern {
                endpoint,
                timeout_s: a.timeout.unwrap_or(t0),
                verify_handshake: v0 || a.verify_handshake,
            }
        }
    };
    Ok(())
}

fn resolve_run(a: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = load_base(a.config.as_deref())?;
    cfg.operator = a.operator.apply(&cfg.operator).map_err(CliError::usage)?;
    apply_solver(&mut cfg, &a.solver);
    apply_schedule(&mut cfg, &a.schedule)?;
    apply_backend(&mut cfg, &a.backend)?;
    if let Some(p) = &a.input {
        cfg.input = Some(p.clone());
    }
    if let Some(p) = &a.reference {
        cfg.reference = Some(p.clone());
    }
    if cfg.input.is_none() {
        return Err(CliError::usage("no input image (give a path or set `input` in the config)"));
    }
    Ok(cfg.resolved())
}

/// Everything a restore needs, loaded from a resolved config.
struct Loaded {
    y: Image,
    op: rdmd_core::ForwardOperator,
    sched: rdmd_core::NoiseSchedule,
    det: rdmd_core::DetSchedule,
    reference: Option<Image>,
}

fn load_problem(cfg: &RunConfig) -> Result<Loaded, CliError> {
    let (sched, det) = cfg.build_schedules()?;
    let y = imgio::read_image(cfg.input.as_deref().expect("resolved config has an input"))?;
    let input_shape = cfg.operator.input_shape_for(y.shape());
    let op = cfg.operator.build(input_shape)?;
    let reference = cfg.reference.as_deref().map(imgio::read_image).transpose()?;
    if let Some(r) = &reference {
        if r.shape() != input_shape {
            return Err(CliError::usage(format!(
                "reference is {}, restored image will be {input_shape}",
                r.shape()
            )));
        }
    }
    Ok(Loaded {
        y,
        op,
        sched,
        det,
        reference,
    })
}

fn cmd_degrade(a: &DegradeArgs, stdout: &mut dyn Write) -> Result<u8, CliError> {
    let mut cfg = load_base(a.config.as_deref())?;
    cfg.operator = a.operator.apply(&cfg.operator).map_err(CliError::usage)?;
    if let Some(v) = a.sigma_n {
        cfg.solver.sigma_n = v;
    }
    if let Some(v) = a.seed {
        cfg.solver.seed = v;
    }
    let x = imgio::read_image(&a.input)?;
    let op = cfg.operator.build(x.shape())?;
    let y = degrade(&op, &x, cfg.solver.sigma_n, cfg.solver.seed)?;
    imgio::write_image(&y, &a.output)?;
    if let Some(k) = cfg.operator.kernel()? {
        let kpath = a.output.with_extension("kernel.txt");
        kernels::write_kernel(&k, &kpath).map_err(|e| io_err(&kpath, e))?;
    }
    // the emitted config restores this measurement directly
    cfg.input = Some(a.output.clone());
    cfg.reference = Some(a.input.clone());
    let cpath = a.output.with_extension("json");
    cfg.resolved().save(&cpath)?;
    let _ = writeln!(stdout, "wrote {} ({} -> {})", a.output.display(), x.shape(), y.shape());
    Ok(0)
}

fn summary_line(x: &Image, reference: &Image) -> Result<String, CliError> {
    let clamped = x.clamped(0.0, 1.0);
    let psnr = metrics::psnr(&clamped, reference)?;
    let ssim = metrics::ssim(&clamped, reference).unwrap_or(f64::NAN);
    Ok(format!("PSNR={psnr:.4} SSIM={ssim:.6}"))
}

fn cmd_restore(a: &RestoreArgs, stdout: &mut dyn Write) -> Result<u8, CliError> {
    let cfg = resolve_run(&a.run)?;
    let l = load_problem(&cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let out_path = a.out_dir.join(&a.output_name);
    if imgio::Format::from_path(&out_path).is_none() {
        return Err(CliError::usage(format!("cannot tell the image format of {}", a.output_name)));
    }
    cfg.save(&a.out_dir.join("config.json"))?;
    let mut backend = cfg.backend.open()?;
    let mut problem = Problem::new(&l.y, &l.op, &l.sched).with_det(&l.det);
    if let Some(r) = &l.reference {
        problem = problem.with_reference(r);
    }
    let result = restore(&problem, &mut backend, &cfg.solver)?;
    drop(backend);
    imgio::write_image(&result.x0, &out_path)?;
    let tpath = a.out_dir.join("trace.csv");
    save_trace(&tpath, &result.trace).map_err(|e| io_err(&tpath, e))?;
    if let Some(r) = &l.reference {
        let _ = writeln!(stdout, "{}", summary_line(&result.x0, r)?);
    }
    Ok(0)
}

fn cmd_sweep(a: &SweepArgs, threads: usize, stdout: &mut dyn Write) -> Result<u8, CliError> {
    let mut cfg = resolve_run(&a.run)?;
    if let Some(bad) = a.taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(CliError::usage(format!("tau {bad} is outside [0, 1]")));
    }
    let lambdas = if a.lambdas.is_empty() {
        vec![cfg.solver.lambda]
    } else {
        a.lambdas.clone()
    };
    let l = load_problem(&cfg)?;
    let reference = l
        .reference
        .as_ref()
        .ok_or_else(|| CliError::usage("sweep needs --reference"))?;
    let inputs = SweepInputs {
        y: &l.y,
        op: &l.op,
        sched: &l.sched,
        det: &l.det,
        reference,
        backend: &cfg.backend,
        base: cfg.solver,
    };
    let rows = run_sweep(&inputs, &lambdas, &a.taus, threads).map_err(|e| CliError {
        exit: Exit::Usage,
        message: e.to_string(),
    })?;
    let file = fs::File::create(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_csv(io::BufWriter::new(file), &rows, a.runtime).map_err(|e| io_err(&a.out, e))?;
    if let Some(p) = &a.scatter {
        let file = fs::File::create(p).map_err(|e| io_err(p, e))?;
        write_scatter(io::BufWriter::new(file), &rows).map_err(|e| io_err(p, e))?;
    }
    cfg.solver.trace_every = 0;
    cfg.save(&a.out.with_extension("json"))?;
    let failed = rows.iter().filter(|r| r.metrics.is_err()).count();
    for r in &rows {
        match &r.metrics {
            Ok(m) => {
                let _ = writeln!(stdout, "lambda={} tau={} PSNR={:.4} SSIM={:.6}", r.lambda, r.tau, m.psnr, m.ssim);
            }
            Err(e) => {
                let _ = writeln!(stdout, "lambda={} tau={} failed: {}", r.lambda, r.tau, e.message);
            }
        }
    }
    if failed == rows.len() {
        let first = rows[0].metrics.as_ref().expect_err("every row failed");
        return Err(CliError {
            exit: first.exit,
            message: format!("all {failed} sweep rows failed"),
        });
    }
    Ok(0)
}

fn cmd_selfcheck(a: &SelfcheckArgs, threads: usize, stdout: &mut dyn Write) -> Result<u8, CliError> {
    let opts = SelfcheckOptions {
        corrupt_kernel: a.corrupt_kernel,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let results = pool.install(|| run_checks(&opts));
    for r in &results {
        let _ = writeln!(stdout, "{r}");
    }
    let passed = results.iter().filter(|r| r.passed).count();
    let _ = writeln!(stdout, "{passed}/{} checks passed", results.len());
    Ok(if passed == results.len() { 0 } else { 1 })
}
