use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rdmd::extern_backend::{Endpoint, ExternBackend, ExternOptions};
use rdmd::protocol::ProtocolError;
use rdmd_core::denoisers::clean_estimate;
use rdmd_core::solver::restore;
use rdmd_core::testbed::Testbed;
use rdmd_core::{DetMode, DetSchedule, Denoiser, Image, NoiseSchedule, Problem, Shape, SolverConfig};

const ECHO: &str = env!("CARGO_BIN_EXE_rdmd-echo-denoiser");

fn echo(args: &str) -> Endpoint {
    Endpoint::Command(format!("{ECHO} {args}"))
}

fn opts(timeout_ms: u64, verify: bool) -> ExternOptions {
    ExternOptions {
        timeout: Duration::from_millis(timeout_ms),
        verify_handshake: verify,
    }
}

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

fn ramp(shape: Shape) -> Image {
    Image::from_fn(shape, |c, r, q| 0.1 * c as f64 + 0.03 * r as f64 - 0.02 * q as f64)
}

struct TcpEcho {
    child: Child,
    addr: String,
}

impl TcpEcho {
    fn start() -> Self {
        let mut child = Command::new(ECHO)
            .args(["--tcp", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        TcpEcho {
            child,
            addr: line.trim().to_string(),
        }
    }
}

impl Drop for TcpEcho {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn endpoint_parsing() {
    assert_eq!(Endpoint::parse("tcp:localhost:9"), Endpoint::Tcp("localhost:9".into()));
    assert_eq!(Endpoint::parse("python serve.py"), Endpoint::Command("python serve.py".into()));
}

fn check_identity(backend: &mut ExternBackend) {
    let s = sched();
    let x = ramp(Shape::new(3, 5, 4));
    for t in [1, 250, 999] {
        let clean = backend.denoise(&x, t, &s).unwrap();
        // float32 rounding of eps is amplified by 1/sqrt(alpha_bar)
        let tol = 1e-7 / s.alpha_bar(t).sqrt();
        for (a, b) in clean.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= tol, "t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn stdio_echo_is_identity() {
    let mut b = ExternBackend::connect(echo(""), opts(10_000, false)).unwrap();
    check_identity(&mut b);
}

#[test]
fn tcp_echo_is_identity() {
    let server = TcpEcho::start();
    let mut b = ExternBackend::connect(Endpoint::Tcp(server.addr.clone()), opts(10_000, true)).unwrap();
    check_identity(&mut b);
    // a second connection to the same server is independent
    let mut b2 = ExternBackend::connect(Endpoint::Tcp(server.addr.clone()), opts(10_000, false)).unwrap();
    check_identity(&mut b2);
}

#[test]
fn eps_matches_echo_formula() {
    let mut b = ExternBackend::connect(echo(""), opts(10_000, false)).unwrap();
    let x = ramp(Shape::new(1, 3, 3));
    let ab = 0.3;
    let eps = b.request_eps(&x, 10, ab).unwrap();
    let k = (1.0 - ab.sqrt()) / (1.0 - ab).sqrt();
    for (e, v) in eps.data().iter().zip(x.data()) {
        assert!((e - v * k).abs() < 1e-7);
    }
}

#[test]
fn restore_through_echo_has_zero_red_residual() {
    let tb = Testbed::gaussian_blur(3).unwrap();
    let s = sched();
    let det = DetSchedule::new(20, DetMode::default_for_noise(tb.sigma_n)).unwrap();
    let cfg = SolverConfig {
        steps: 20,
        tau: 0.5,
        zeta: 0.5,
        sigma_n: tb.sigma_n,
        seed: 7,
        ..SolverConfig::default()
    };
    let problem = Problem::new(&tb.y, &tb.op, &s).with_det(&det);
    let mut b = ExternBackend::connect(echo(""), opts(10_000, true)).unwrap();
    let out = restore(&problem, &mut b, &cfg).unwrap();
    assert_eq!(out.trace.len(), 20);
    for rec in &out.trace {
        let r = rec.red_norm.unwrap();
        // float32 transport bounds the residual
        assert!(r <= 1e-5, "step {}: red_norm {r}", rec.step);
    }
}

#[test]
fn shape_mismatch_is_a_remote_error() {
    let mut b = ExternBackend::connect(echo("--shape 1x4x4"), opts(10_000, false)).unwrap();
    assert!(b.request_eps(&Image::zeros(Shape::new(1, 4, 4)), 1, 0.5).is_ok());
    match b.request_eps(&Image::zeros(Shape::new(1, 5, 5)), 1, 0.5) {
        Err(ProtocolError::Remote(m)) => assert!(m.contains("shape mismatch"), "{m}"),
        other => panic!("{other:?}"),
    }
    // the connection is not reused after a failure
    assert!(b.request_eps(&Image::zeros(Shape::new(1, 4, 4)), 1, 0.5).is_err());
}

#[test]
fn handshake_reports_server_schedule() {
    let mut b = ExternBackend::connect(echo("--t-train 500 --beta-end 0.03 --shape 3x8x8"), opts(10_000, false)).unwrap();
    let hs = b.handshake().unwrap();
    assert_eq!(hs.train_steps, 500);
    assert_eq!(hs.beta_end, 0.03);
    assert_eq!(hs.dims, [3, 8, 8]);
    assert!(!hs.accepts_any_shape());
}

#[test]
fn handshake_mismatch_is_rejected() {
    let s = sched();
    let x = Image::zeros(Shape::new(1, 4, 4));
    for args in ["--t-train 500", "--beta-end 0.021", "--shape 1x8x8"] {
        let mut b = ExternBackend::connect(echo(args), opts(10_000, true)).unwrap();
        match b.predict_eps(&x, 5, &s) {
            Err(rdmd_core::Error::Backend(m)) => assert!(m.contains("handshake mismatch"), "{args}: {m}"),
            other => panic!("{args}: {other:?}"),
        }
    }
    // without verification the same server is used as is
    let mut b = ExternBackend::connect(echo("--t-train 500"), opts(10_000, false)).unwrap();
    assert!(b.predict_eps(&x, 5, &s).is_ok());
    let mut b = ExternBackend::connect(echo(""), opts(10_000, true)).unwrap();
    assert!(b.predict_eps(&x, 5, &s).is_ok());
}

#[test]
fn hung_server_times_out() {
    let x = Image::zeros(Shape::new(1, 2, 2));
    let mut b = ExternBackend::connect(echo("--hang-after 1"), opts(300, false)).unwrap();
    assert!(b.request_eps(&x, 1, 0.5).is_ok());
    let start = Instant::now();
    assert!(matches!(b.request_eps(&x, 1, 0.5), Err(ProtocolError::Timeout(_))));
    let waited = start.elapsed();
    assert!(waited >= Duration::from_millis(300) && waited < Duration::from_secs(5), "{waited:?}");
    assert!(b.request_eps(&x, 1, 0.5).is_err());
}

#[test]
fn garbage_and_dead_servers() {
    let x = Image::zeros(Shape::new(1, 2, 2));
    let garbage = Endpoint::Command("printf 'XXXXXXXXXXXXXXXXXXXXXXXX'; cat > /dev/null".into());
    let mut b = ExternBackend::connect(garbage, opts(5_000, false)).unwrap();
    assert!(matches!(b.request_eps(&x, 1, 0.5), Err(ProtocolError::BadMagic(_))));

    let dead = Endpoint::Command("exit 0".into());
    let mut b = ExternBackend::connect(dead, opts(5_000, false)).unwrap();
    assert!(matches!(
        b.request_eps(&x, 1, 0.5),
        Err(ProtocolError::Closed) | Err(ProtocolError::Io(_))
    ));

    let refused = ExternBackend::connect(Endpoint::Tcp("127.0.0.1:1".into()), opts(1_000, false));
    assert!(matches!(refused, Err(ProtocolError::Io(_))));
}

#[test]
fn predict_eps_checks_inputs() {
    let s = sched();
    let mut b = ExternBackend::connect(echo(""), opts(10_000, false)).unwrap();
    let x = Image::zeros(Shape::new(1, 2, 2));
    assert!(matches!(b.predict_eps(&x, 0, &s), Err(rdmd_core::Error::Param { .. })));
    assert!(matches!(b.predict_eps(&x, 1001, &s), Err(rdmd_core::Error::Param { .. })));
    let mut nan = x.clone();
    nan.data_mut()[1] = f64::NAN;
    assert!(matches!(b.predict_eps(&nan, 3, &s), Err(rdmd_core::Error::NonFinite(_))));
    let eps = b.predict_eps(&x, 3, &s).unwrap();
    assert_eq!(clean_estimate(&x, &eps, s.alpha_bar(3)).data(), x.data());
}
