use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rdmd::config::{OperatorSpec, RunConfig};
use rdmd::imgio::{quantize, read_image, write_image};
use rdmd::kernels::read_kernel;
use rdmd::trace::read_trace;
use rdmd_core::operators::degrade;
use rdmd_core::{Image, Shape};

const RDMD: &str = env!("CARGO_BIN_EXE_rdmd");
const ECHO: &str = env!("CARGO_BIN_EXE_rdmd-echo-denoiser");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(RDMD).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stdout: {}\nstderr: {}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    o
}

fn clean_image() -> Image {
    Image::from_fn(Shape::new(1, 32, 32), |_, r, q| {
        0.5 + 0.3 * (r as f64 / 5.0).sin() * (q as f64 / 7.0).cos()
    })
}

/// Temp dir holding `x.pgm` and a blurred measurement `y.pgm` with its config `y.json`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_image(&clean_image(), &dir.path().join("x.pgm")).unwrap();
    ok(run(
        dir.path(),
        &["degrade", "--op", "blur-gauss", "--size", "9", "--std", "1.5", "--sigma-n", "0.05", "--seed", "3", "x.pgm", "y.pgm"],
    ));
    dir
}

fn bytes(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn degrade_sr_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_image(&clean_image(), &d.join("in.png")).unwrap();
    let args = ["degrade", "--op", "sr", "--scale", "4", "--sigma-n", "0.05", "--seed", "7", "in.png"];
    ok(run(d, &[&args[..], &["a.png"]].concat()));
    ok(run(d, &[&args[..], &["b.png"]].concat()));
    assert_eq!(bytes(d.join("a.png")), bytes(d.join("b.png")));
    assert_eq!(read_image(&d.join("a.png")).unwrap().shape(), Shape::new(1, 8, 8));
    assert!(!d.join("a.kernel.txt").exists());
    let cfg = RunConfig::load(&d.join("a.json")).unwrap();
    assert_eq!(cfg.operator, OperatorSpec::Sr { scale: 4 });
    assert_eq!(cfg.solver.sigma_n, 0.05);
    assert_eq!(cfg.solver.seed, 7);
    assert_eq!(cfg.input, Some(PathBuf::from("a.png")));
    assert_eq!(cfg.reference, Some(PathBuf::from("in.png")));
    ok(run(d, &[&args[..7], &["--seed", "8", "in.png", "c.png"]].concat()));
    assert_ne!(bytes(d.join("a.png")), bytes(d.join("c.png")));
}

#[test]
fn noiseless_degrade_is_the_operator() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let x = read_image(&{
        write_image(&clean_image(), &d.join("x.pgm")).unwrap();
        d.join("x.pgm")
    })
    .unwrap();
    ok(run(d, &["degrade", "--op", "blur-motion", "--length", "5", "--angle", "-45", "--sigma-n", "0", "x.pgm", "y.pgm"]));
    let spec = RunConfig::load(&d.join("y.json")).unwrap().operator;
    let op = spec.build(x.shape()).unwrap();
    let want = degrade(&op, &x, 0.0, 0).unwrap();
    let got = read_image(&d.join("y.pgm")).unwrap();
    for (g, w) in got.data().iter().zip(want.data()) {
        assert_eq!(*g, f64::from(quantize(*w)) / 255.0);
    }
}

#[test]
fn degrade_writes_a_61_tap_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_image(&Image::filled(Shape::new(3, 64, 64), 0.5), &d.join("x.ppm")).unwrap();
    ok(run(d, &["degrade", "--op", "blur-gauss", "--size", "61", "--std", "3.0", "x.ppm", "y.ppm"]));
    let k = read_kernel(&d.join("y.kernel.txt")).unwrap();
    assert_eq!((k.height(), k.width()), (61, 61));
    assert!((k.sum() - 1.0).abs() < 1e-12);
    let want = rdmd_core::operators::gaussian_kernel(61, 3.0).unwrap();
    assert_eq!(k.taps(), want.taps());
}

#[test]
fn restore_writes_outputs_and_metrics() {
    let dir = workspace();
    let d = dir.path();
    let o = ok(run(d, &["restore", "--config", "y.json", "--steps", "10", "--out-dir", "out"]));
    let line = stdout(&o);
    let line = line.trim();
    assert!(line.starts_with("PSNR=") && line.contains(" SSIM="), "{line}");
    let psnr: f64 = line[5..line.find(' ').unwrap()].parse().unwrap();
    assert!(psnr > 15.0);
    assert_eq!(read_image(&d.join("out/restored.png")).unwrap().shape(), Shape::new(1, 32, 32));
    let trace = read_trace(fs::File::open(d.join("out/trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.len(), 10);
    assert_eq!(trace[0].t, 10);
    assert!(trace.iter().all(|r| r.psnr.is_some()));
    let cfg = RunConfig::load(&d.join("out/config.json")).unwrap();
    assert_eq!(cfg.solver.steps, 10);
    assert!(cfg.schedule.det.is_some());
}

#[test]
fn restore_is_bit_reproducible() {
    let dir = workspace();
    let d = dir.path();
    for zeta in ["0", "1"] {
        let a = format!("a{zeta}");
        let b = format!("b{zeta}");
        let base = ["restore", "--config", "y.json", "--steps", "12", "--tau", "1", "--zeta", zeta, "--seed", "7"];
        ok(run(d, &[&base[..], &["--out-dir", &a]].concat()));
        ok(run(d, &[&base[..], &["--out-dir", &b]].concat()));
        for f in ["restored.png", "trace.csv", "config.json"] {
            assert_eq!(bytes(d.join(&a).join(f)), bytes(d.join(&b).join(f)), "zeta={zeta} {f}");
        }
    }
    // the emitted config alone reproduces the run
    ok(run(d, &["restore", "--config", "a1/config.json", "--out-dir", "c1", "--output-name", "r.pgm"]));
    let first = read_image(&d.join("a1/restored.png")).unwrap();
    assert_eq!(read_image(&d.join("c1/r.pgm")).unwrap(), first);
    assert_eq!(bytes(d.join("a1/trace.csv")), bytes(d.join("c1/trace.csv")));
}

#[test]
fn flags_override_the_config_file() {
    let dir = workspace();
    let d = dir.path();
    let mut cfg = RunConfig::load(&d.join("y.json")).unwrap();
    cfg.solver.lambda = 3.0;
    cfg.solver.tau = 0.2;
    cfg.solver.steps = 5;
    cfg.save(&d.join("base.json")).unwrap();
    ok(run(d, &["restore", "--config", "base.json", "--lambda", "5", "--std", "1.0", "--out-dir", "o"]));
    let got = RunConfig::load(&d.join("o/config.json")).unwrap();
    assert_eq!(got.solver.lambda, 5.0);
    assert_eq!(got.solver.tau, 0.2);
    assert_eq!(got.solver.steps, 5);
    assert_eq!(got.operator, OperatorSpec::BlurGauss { size: 9, std: 1.0 });
    ok(run(d, &["restore", "--config", "base.json", "--op", "identity", "--det-mode", "constant", "--det-sigma", "0.3", "--out-dir", "p"]));
    let got = RunConfig::load(&d.join("p/config.json")).unwrap();
    assert_eq!(got.operator, OperatorSpec::Identity);
    assert_eq!(got.schedule.det, Some(rdmd_core::DetMode::Constant { sigma: 0.3 }));
}

#[test]
fn extern_echo_backend_has_zero_red_residual() {
    let dir = workspace();
    let d = dir.path();
    let backend = format!("extern:{ECHO} --t-train 1000");
    ok(run(d, &["restore", "--config", "y.json", "--steps", "10", "--backend", &backend, "--verify-handshake", "--out-dir", "e"]));
    let trace = read_trace(fs::File::open(d.join("e/trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.len(), 10);
    for r in &trace {
        assert!(r.red_norm.unwrap() <= 1e-5, "{r:?}");
    }
    let cfg = RunConfig::load(&d.join("e/config.json")).unwrap();
    assert_eq!(cfg.backend.kind(), "extern");
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = workspace();
    let d = dir.path();
    let restore = |extra: &[&str]| {
        let mut args = vec!["restore", "--config", "y.json", "--steps", "5", "--out-dir", "o"];
        args.extend_from_slice(extra);
        code(&run(d, &args))
    };
    assert_eq!(code(&run(d, &["--help"])), 0);
    assert_eq!(code(&run(d, &["restore", "--help"])), 0);
    assert_eq!(code(&run(d, &[])), 2);
    assert_eq!(code(&run(d, &["restore", "--bogus"])), 2);
    assert_eq!(restore(&["--tau", "2"]), 2);
    assert_eq!(restore(&["--scale", "2"]), 2);
    assert_eq!(restore(&["--backend", "magic"]), 2);
    assert_eq!(restore(&["--steps", "5000"]), 2);
    assert_eq!(restore(&["--reference", "y.kernel.txt"]), 3);
    assert_eq!(restore(&["--op", "sr", "--reference", "x.pgm"]), 2);
    assert_eq!(code(&run(d, &["restore", "missing.png", "--out-dir", "o"])), 3);
    assert_eq!(code(&run(d, &["restore", "--config", "missing.json", "--out-dir", "o"])), 3);
    fs::write(d.join("typo.json"), r#"{"solver": {"lamda": 2}}"#).unwrap();
    assert_eq!(code(&run(d, &["restore", "--config", "typo.json", "y.pgm", "--out-dir", "o"])), 2);
    assert_eq!(restore(&["--lambda", "1e9", "--eta", "10"]), 4);
    assert_eq!(restore(&["--backend", "extern:tcp:127.0.0.1:1"]), 5);
    assert_eq!(restore(&["--backend", &format!("extern:{ECHO} --hang-after 2"), "--timeout", "0.3"]), 5);
    assert_eq!(restore(&["--backend", &format!("extern:{ECHO} --t-train 10"), "--verify-handshake"]), 5);
    assert_eq!(restore(&["--backend", &format!("extern:{ECHO} --shape 1x8x8")]), 5);
    assert_eq!(restore(&[]), 0);
}

fn csv_rows(p: PathBuf) -> Vec<String> {
    String::from_utf8(bytes(p)).unwrap().lines().skip(1).map(str::to_string).collect()
}

#[test]
fn sweep_tables() {
    let dir = workspace();
    let d = dir.path();
    let base = ["sweep", "--config", "y.json", "--steps", "8", "--taus", "0,0.1,0.5,1"];
    ok(run(d, &[&base[..], &["--out", "a.csv", "--threads", "1", "--scatter", "a.dat"]].concat()));
    ok(run(d, &[&base[..], &["--out", "b.csv", "--threads", "4"]].concat()));
    assert_eq!(csv_rows(d.join("a.csv")).len(), 4);
    assert_eq!(bytes(d.join("a.csv")), bytes(d.join("b.csv")));
    assert!(d.join("a.dat").exists());
    let cfg = RunConfig::load(&d.join("a.json")).unwrap();
    assert_eq!(cfg.solver.steps, 8);

    ok(run(d, &[&base[..], &["--lambdas", "10,20,50", "--out", "g.csv"]].concat()));
    let rows = csv_rows(d.join("g.csv"));
    assert_eq!(rows.len(), 12);
    assert!(rows[0].starts_with("10,0,") && rows[11].starts_with("50,1,"));

    ok(run(d, &[&base[..], &["--runtime", "--out", "r.csv"]].concat()));
    assert!(String::from_utf8(bytes(d.join("r.csv"))).unwrap().starts_with("lambda,tau,psnr,ssim,mse,error,runtime_s"));
}

#[test]
fn sweep_failures() {
    let dir = workspace();
    let d = dir.path();
    let base = ["sweep", "--config", "y.json", "--steps", "5", "--taus", "0,1"];
    // one diverging lambda: still a success, the error lands in its rows
    ok(run(d, &[&base[..], &["--lambdas", "1,1e9", "--out", "p.csv"]].concat()));
    let rows = csv_rows(d.join("p.csv"));
    assert!(rows[0].ends_with(','));
    assert!(rows[3].contains("diverged"));
    let all_fail = run(d, &[&base[..], &["--backend", "extern:tcp:127.0.0.1:1", "--out", "f.csv"]].concat());
    assert_eq!(code(&all_fail), 5);
    assert!(csv_rows(d.join("f.csv")).iter().all(|r| r.contains("cannot reach")));
    assert_eq!(code(&run(d, &["sweep", "y.pgm", "--taus", "0", "--out", "n.csv"])), 2);
    assert_eq!(code(&run(d, &[&base[..3], &["--out", "n.csv"]].concat())), 2);
    assert_eq!(code(&run(d, &[&base[..4], &["--taus", "0,2", "--out", "n.csv"]].concat())), 2);
}

#[test]
fn selfcheck_passes_and_catches_a_bad_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let one = ok(run(d, &["selfcheck", "--threads", "1"]));
    let many = ok(run(d, &["--threads", "4", "selfcheck"]));
    assert_eq!(stdout(&one), stdout(&many));
    let text = stdout(&one);
    let checks: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert_eq!(checks.len(), 7);
    assert!(checks.iter().all(|l| l.starts_with("PASS")));
    for name in ["adjoint", "kernel-normalization", "schedule", "eps-roundtrip", "renoising-identity", "scalar-oracle", "determinism"] {
        assert!(checks.iter().any(|l| l.split_whitespace().nth(1) == Some(name)), "{name}");
    }

    let bad = run(d, &["selfcheck", "--corrupt-kernel"]);
    assert_ne!(code(&bad), 0);
    let text = stdout(&bad);
    let status = |name: &str| {
        text.lines()
            .find(|l| l.split_whitespace().nth(1) == Some(name))
            .and_then(|l| l.split_whitespace().next())
            .map(str::to_string)
    };
    assert_eq!(status("adjoint").as_deref(), Some("PASS"));
    assert_eq!(status("kernel-normalization").as_deref(), Some("FAIL"));
    assert_eq!(code(&run(d, &["selfcheck", "--threads", "0"])), 2);
}
