//! Identity noise predictor used as a protocol fixture.
//!
//! For a request at `alpha_bar` it answers
//! `eps = x (1 - sqrt(alpha_bar)) / sqrt(1 - alpha_bar)`, for which the derived
//! clean estimate is `x` itself, up to float32 rounding.

use std::io::{self, Read, Write};

use crate::protocol::{EpsRequest, EpsResponse, Frame, Handshake, MsgType, ProtocolError};

#[derive(Debug, Clone, Copy)]
pub struct EchoConfig {
    pub handshake: Handshake,
    /// Stop answering (but keep the connection open) after this many requests.
    pub hang_after: Option<usize>,
}

impl Default for EchoConfig {
    fn default() -> Self {
        EchoConfig {
            handshake: Handshake {
                train_steps: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
                dims: [0, 0, 0],
            },
            hang_after: None,
        }
    }
}

pub fn echo_eps(req: &EpsRequest) -> EpsResponse {
    let ab = req.alpha_bar;
    let k = if ab >= 1.0 { 0.0 } else { (1.0 - ab.sqrt()) / (1.0 - ab).sqrt() };
    EpsResponse {
        dims: req.dims,
        data: req.data.iter().map(|&x| (f64::from(x) * k) as f32).collect(),
    }
}

/// Answers frames until the peer closes the stream. Malformed input gets an
/// error frame and ends the session.
pub fn serve(mut r: impl Read, mut w: impl Write, cfg: &EchoConfig) -> io::Result<()> {
    let mut served = 0usize;
    loop {
        let frame = match Frame::read_from(&mut r) {
            Ok(f) => f,
            Err(ProtocolError::Closed) => return Ok(()),
            Err(ProtocolError::Io(e)) if e.kind() != io::ErrorKind::UnexpectedEof => return Err(e),
            Err(e) => {
                Frame::error(&e.to_string()).write_to(&mut w)?;
                return Ok(());
            }
        };
        let reply = match frame.msg_type {
            MsgType::Handshake => cfg.handshake.to_frame(),
            MsgType::EpsRequest => match EpsRequest::from_payload(&frame.payload) {
                Ok(req) => {
                    let expect = cfg.handshake.dims;
                    if !cfg.handshake.accepts_any_shape() && req.dims != expect {
                        Frame::error(&format!("shape mismatch: got {:?}, serving {:?}", req.dims, expect))
                    } else if !(req.alpha_bar > 0.0 && req.alpha_bar <= 1.0) {
                        Frame::error(&format!("alpha_bar {} outside (0, 1]", req.alpha_bar))
                    } else {
                        if cfg.hang_after.is_some_and(|n| served >= n) {
                            // swallow everything from here on
                            io::copy(&mut r, &mut io::sink())?;
                            return Ok(());
                        }
                        served += 1;
                        echo_eps(&req).to_frame()
                    }
                }
                Err(e) => {
                    Frame::error(&format!("bad request: {e}")).write_to(&mut w)?;
                    return Ok(());
                }
            },
            other => Frame::error(&format!("unexpected {other:?} frame")),
        };
        reply.write_to(&mut w)?;
    }
}
