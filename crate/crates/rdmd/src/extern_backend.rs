//! Noise predictor living in another process, reached over stdio or TCP.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use rdmd_core::{Denoiser, Error, Image, NoiseSchedule, Shape};

use crate::protocol::{shape_dims, EpsRequest, EpsResponse, Frame, Handshake, MsgType, ProtocolError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Shell command whose stdin/stdout carry the frames.
    Command(String),
    /// `host:port` of a listening server.
    Tcp(String),
}

impl Endpoint {
    /// `tcp:<host:port>` or a shell command.
    pub fn parse(spec: &str) -> Endpoint {
        match spec.strip_prefix("tcp:") {
            Some(addr) => Endpoint::Tcp(addr.to_string()),
            None => Endpoint::Command(spec.to_string()),
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Command(c) => f.write_str(c),
            Endpoint::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExternOptions {
    pub timeout: Duration,
    /// Ask the server for its schedule before the first request and refuse to run on a mismatch.
    pub verify_handshake: bool,
}

impl Default for ExternOptions {
    fn default() -> Self {
        ExternOptions {
            timeout: DEFAULT_TIMEOUT,
            verify_handshake: false,
        }
    }
}

/// One connection, one request in flight. After any protocol failure the
/// connection is considered unusable and every later call fails.
pub struct ExternBackend {
    endpoint: Endpoint,
    writer: Option<BufWriter<Box<dyn Write + Send>>>,
    frames: Receiver<Result<Frame, ProtocolError>>,
    child: Option<Child>,
    opts: ExternOptions,
    verified: bool,
    broken: Option<String>,
}

impl std::fmt::Debug for ExternBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternBackend")
            .field("endpoint", &self.endpoint)
            .field("opts", &self.opts)
            .field("broken", &self.broken)
            .finish_non_exhaustive()
    }
}

fn spawn_reader(mut r: impl Read + Send + 'static) -> Receiver<Result<Frame, ProtocolError>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || loop {
        let frame = Frame::read_from(&mut r);
        let done = frame.is_err();
        if tx.send(frame).is_err() || done {
            break;
        }
    });
    rx
}

impl ExternBackend {
    pub fn connect(endpoint: Endpoint, opts: ExternOptions) -> Result<Self, ProtocolError> {
        let (writer, frames, child): (Box<dyn Write + Send>, _, _) = match &endpoint {
            Endpoint::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("stdin piped");
                let stdout = child.stdout.take().expect("stdout piped");
                (Box::new(stdin), spawn_reader(BufReader::new(stdout)), Some(child))
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let read_half = stream.try_clone()?;
                (Box::new(stream), spawn_reader(BufReader::new(read_half)), None)
            }
        };
        Ok(ExternBackend {
            endpoint,
            writer: Some(BufWriter::new(writer)),
            frames,
            child,
            opts,
            verified: false,
            broken: None,
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn exchange(&mut self, frame: &Frame, want: MsgType) -> Result<Frame, ProtocolError> {
        if let Some(reason) = &self.broken {
            return Err(ProtocolError::Remote(format!("connection unusable after earlier failure: {reason}")));
        }
        let result = self.exchange_inner(frame, want);
        if let Err(e) = &result {
            self.broken = Some(e.to_string());
        }
        result
    }

    fn exchange_inner(&mut self, frame: &Frame, want: MsgType) -> Result<Frame, ProtocolError> {
        let w = self.writer.as_mut().expect("writer open while connected");
        frame.write_to(w)?;
        let reply = match self.frames.recv_timeout(self.opts.timeout) {
            Ok(r) => r?,
            Err(RecvTimeoutError::Timeout) => return Err(ProtocolError::Timeout(self.opts.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(ProtocolError::Closed),
        };
        match reply.msg_type {
            t if t == want => Ok(reply),
            MsgType::Error => Err(ProtocolError::Remote(String::from_utf8_lossy(&reply.payload).into_owned())),
            got => Err(ProtocolError::Unexpected { got, want }),
        }
    }

    /// Fetches the server's schedule and shape.
    pub fn handshake(&mut self) -> Result<Handshake, ProtocolError> {
        let reply = self.exchange(&Frame::new(MsgType::Handshake, Vec::new()), MsgType::Handshake)?;
        Handshake::from_payload(&reply.payload)
    }

    /// Checks the advertised schedule against `sched` and the advertised shape against `shape`.
    pub fn verify(&mut self, sched: &NoiseSchedule, shape: Shape) -> Result<(), ProtocolError> {
        let hs = self.handshake()?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        let (b0, b1) = (sched.beta(1), sched.beta(sched.steps()));
        let problem = if hs.train_steps as usize != sched.steps() {
            Some(format!("server T_train {} vs {}", hs.train_steps, sched.steps()))
        } else if !close(hs.beta_start, b0) || !close(hs.beta_end, b1) {
            Some(format!(
                "server betas [{}, {}] vs [{b0}, {b1}]",
                hs.beta_start, hs.beta_end
            ))
        } else if !hs.accepts_any_shape() && hs.dims != shape_dims(shape) {
            Some(format!("server shape {:?} vs {shape}", hs.dims))
        } else {
            None
        };
        match problem {
            Some(p) => {
                self.broken = Some(p.clone());
                Err(ProtocolError::Handshake(p))
            }
            None => {
                self.verified = true;
                Ok(())
            }
        }
    }

    pub fn request_eps(&mut self, x_t: &Image, t: usize, alpha_bar: f64) -> Result<Image, ProtocolError> {
        let req = EpsRequest::from_image(x_t, t, alpha_bar);
        let reply = self.exchange(&req.to_frame(), MsgType::EpsResponse)?;
        let eps = EpsResponse::from_payload(&reply.payload)?.into_image(x_t.shape())?;
        if !eps.is_finite() {
            return Err(ProtocolError::Malformed("response contains non-finite values".into()));
        }
        Ok(eps)
    }
}

impl Denoiser for ExternBackend {
    fn predict_eps(&mut self, x_t: &Image, t: usize, sched: &NoiseSchedule) -> rdmd_core::Result<Image> {
        if t == 0 || t > sched.steps() {
            return Err(Error::Param {
                name: "t",
                reason: format!("step {t} outside [1, {}]", sched.steps()),
            });
        }
        if !x_t.is_finite() {
            return Err(Error::NonFinite("denoiser input"));
        }
        let backend_err = |e: ProtocolError, endpoint: &Endpoint| Error::Backend(format!("{endpoint}: {e}"));
        if self.opts.verify_handshake && !self.verified {
            self.verify(sched, x_t.shape()).map_err(|e| backend_err(e, &self.endpoint))?;
        }
        self.request_eps(x_t, t, sched.alpha_bar(t)).map_err(|e| backend_err(e, &self.endpoint))
    }
}

impl Drop for ExternBackend {
    fn drop(&mut self) {
        // closing stdin lets a well-behaved server exit on its own
        drop(self.writer.take());
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
