//! Little-endian framed messages exchanged with an external noise predictor.
//!
//! ```text
//! frame    = "RDMD" | version u32 | msg_type u8 | payload_len u64 | payload
//! request  = t u32 | alpha_bar f64 | ndim u32 (= 3) | dims 3 x u32 | f32 data
//! response = ndim u32 | dims 3 x u32 | f32 data
//! error    = UTF-8 message
//! ```
//!
//! Message type 4 is a handshake. A client sends it with an empty payload and
//! the server answers with its training schedule and expected shape
//! (`T_train u32 | beta_start f64 | beta_end f64 | ndim u32 | dims`, zero dims
//! meaning any shape). Servers that do not implement it answer with an error
//! frame, so clients only send it when asked to verify the schedule.

use std::io::{self, Read, Write};

use rdmd_core::{Image, Shape};

pub const MAGIC: [u8; 4] = *b"RDMD";
pub const VERSION: u32 = 1;
/// Largest payload accepted from a peer.
pub const MAX_PAYLOAD: u64 = 1 << 32;
const HEADER_LEN: usize = 4 + 4 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    EpsRequest = 1,
    EpsResponse = 2,
    Error = 3,
    Handshake = 4,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<MsgType> {
        match v {
            1 => Some(MsgType::EpsRequest),
            2 => Some(MsgType::EpsResponse),
            3 => Some(MsgType::Error),
            4 => Some(MsgType::Handshake),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("connection: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed by peer")]
    Closed,
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u32),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds the limit")]
    TooLarge(u64),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("unexpected {got:?} frame, wanted {want:?}")]
    Unexpected { got: MsgType, want: MsgType },
    #[error("peer reported: {0}")]
    Remote(String),
    #[error("no response within {0:?}")]
    Timeout(std::time::Duration),
    #[error("handshake mismatch: {0}")]
    Handshake(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Frame { msg_type, payload }
    }

    pub fn error(message: &str) -> Self {
        Frame::new(MsgType::Error, message.as_bytes().to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }

    /// Reads one frame. A clean end of stream before the first byte is [`ProtocolError::Closed`].
    pub fn read_from(r: &mut impl Read) -> Result<Frame, ProtocolError> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match r.read(&mut header[filled..]) {
                Ok(0) if filled == 0 => return Err(ProtocolError::Closed),
                Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let magic: [u8; 4] = header[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(ProtocolError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(ProtocolError::BadVersion(version));
        }
        let msg_type = MsgType::from_u8(header[8]).ok_or(ProtocolError::UnknownType(header[8]))?;
        let len = u64::from_le_bytes(header[9..17].try_into().expect("8 bytes"));
        if len > MAX_PAYLOAD {
            return Err(ProtocolError::TooLarge(len));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        Ok(Frame { msg_type, payload })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            ProtocolError::Malformed(format!("truncated {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(ProtocolError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

fn put_tensor(out: &mut Vec<u8>, dims: [u32; 3], data: &[f32]) {
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_tensor(c: &mut Cursor<'_>) -> Result<([u32; 3], Vec<f32>), ProtocolError> {
    let ndim = c.u32("ndim")?;
    if ndim != 3 {
        return Err(ProtocolError::Malformed(format!("shape must have 3 dims, got {ndim}")));
    }
    let dims = [c.u32("dims")?, c.u32("dims")?, c.u32("dims")?];
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
    let count = count.ok_or_else(|| ProtocolError::Malformed("shape overflows".into()))?;
    let raw = c.take(count.saturating_mul(4), "tensor data")?;
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    Ok((dims, data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsRequest {
    pub t: u32,
    pub alpha_bar: f64,
    pub dims: [u32; 3],
    pub data: Vec<f32>,
}

impl EpsRequest {
    pub fn from_image(x: &Image, t: usize, alpha_bar: f64) -> Self {
        EpsRequest {
            t: t as u32,
            alpha_bar,
            dims: shape_dims(x.shape()),
            data: x.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_frame(&self) -> Frame {
        let mut p = Vec::with_capacity(4 + 8 + 16 + 4 * self.data.len());
        p.extend_from_slice(&self.t.to_le_bytes());
        p.extend_from_slice(&self.alpha_bar.to_le_bytes());
        put_tensor(&mut p, self.dims, &self.data);
        Frame::new(MsgType::EpsRequest, p)
    }

    pub fn from_payload(payload: &[u8]) -> Result<Self, ProtocolError> {
        let mut c = Cursor::new(payload);
        let t = c.u32("t")?;
        let alpha_bar = c.f64("alpha_bar")?;
        let (dims, data) = get_tensor(&mut c)?;
        c.finish()?;
        Ok(EpsRequest {
            t,
            alpha_bar,
            dims,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsResponse {
    pub dims: [u32; 3],
    pub data: Vec<f32>,
}

impl EpsResponse {
    pub fn to_frame(&self) -> Frame {
        let mut p = Vec::with_capacity(16 + 4 * self.data.len());
        put_tensor(&mut p, self.dims, &self.data);
        Frame::new(MsgType::EpsResponse, p)
    }

    pub fn from_payload(payload: &[u8]) -> Result<Self, ProtocolError> {
        let mut c = Cursor::new(payload);
        let (dims, data) = get_tensor(&mut c)?;
        c.finish()?;
        Ok(EpsResponse { dims, data })
    }

    /// Upcasts to an image, checking the shape against `expected`.
    pub fn into_image(self, expected: Shape) -> Result<Image, ProtocolError> {
        if self.dims != shape_dims(expected) {
            return Err(ProtocolError::Malformed(format!(
                "response shape {:?} does not match request {expected}",
                self.dims
            )));
        }
        let data = self.data.into_iter().map(f64::from).collect();
        Image::new(expected, data).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

/// Schedule and shape advertised by a server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Handshake {
    pub train_steps: u32,
    pub beta_start: f64,
    pub beta_end: f64,
    /// `[0, 0, 0]` when the server accepts any shape.
    pub dims: [u32; 3],
}

impl Handshake {
    pub fn to_frame(&self) -> Frame {
        let mut p = Vec::with_capacity(4 + 16 + 16);
        p.extend_from_slice(&self.train_steps.to_le_bytes());
        p.extend_from_slice(&self.beta_start.to_le_bytes());
        p.extend_from_slice(&self.beta_end.to_le_bytes());
        p.extend_from_slice(&3u32.to_le_bytes());
        for d in self.dims {
            p.extend_from_slice(&d.to_le_bytes());
        }
        Frame::new(MsgType::Handshake, p)
    }

    pub fn from_payload(payload: &[u8]) -> Result<Self, ProtocolError> {
        let mut c = Cursor::new(payload);
        let train_steps = c.u32("T_train")?;
        let beta_start = c.f64("beta_start")?;
        let beta_end = c.f64("beta_end")?;
        let ndim = c.u32("ndim")?;
        if ndim != 3 {
            return Err(ProtocolError::Malformed(format!("shape must have 3 dims, got {ndim}")));
        }
        let dims = [c.u32("dims")?, c.u32("dims")?, c.u32("dims")?];
        c.finish()?;
        Ok(Handshake {
            train_steps,
            beta_start,
            beta_end,
            dims,
        })
    }

    pub fn accepts_any_shape(&self) -> bool {
        self.dims == [0, 0, 0]
    }
}

pub fn shape_dims(s: Shape) -> [u32; 3] {
    [s.channels as u32, s.height as u32, s.width as u32]
}
