//! 8-bit image files: PNG through the `png` codec, binary PGM/PPM natively.
//!
//! Samples map to `u / 255`. On write, values are clamped to `[0, 1]` and
//! rounded half away from zero, so `0.5` becomes 128.

use std::fs;
use std::io::{self, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use rdmd_core::{Image, Shape};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{}: file not found", .0.display())]
    NotFound(PathBuf),
    #[error("{}: malformed {format} file: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        format: &'static str,
        reason: String,
    },
    #[error("{}: unsupported bit depth {depth} (only 8-bit images are supported)", path.display())]
    UnsupportedDepth { path: PathBuf, depth: u32 },
    #[error("{}: unsupported image format: {what}", path.display())]
    UnsupportedFormat { path: PathBuf, what: String },
    #[error("{}: cannot write {channels}-channel image (need 1 or 3)", path.display())]
    ChannelCount { path: PathBuf, channels: usize },
    #[error("{}: image contains non-finite values", .0.display())]
    NonFinite(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl ImageError {
    fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            ImageError::NotFound(path.to_path_buf())
        } else {
            ImageError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Png,
    /// Binary PGM (`P5`) or PPM (`P6`), chosen by channel count on write.
    Pnm,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(Format::Png),
            "pgm" | "ppm" | "pnm" => Some(Format::Pnm),
            _ => None,
        }
    }
}

/// `round(clamp(v, 0, 1) * 255)`, ties away from zero.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8-bit gray or RGB image. The format is sniffed from the content.
/// Alpha channels are dropped.
pub fn read_image(path: &Path) -> Result<Image, ImageError> {
    let bytes = fs::read(path).map_err(|e| ImageError::io(path, e))?;
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(path, &bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(path, &bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && (b'1'..=b'7').contains(&bytes[1]) {
        Err(ImageError::UnsupportedFormat {
            path: path.to_path_buf(),
            what: format!("P{} (only binary P5/P6 are read)", bytes[1] as char),
        })
    } else {
        Err(ImageError::UnsupportedFormat {
            path: path.to_path_buf(),
            what: "not a PNG, PGM or PPM file".into(),
        })
    }
}

/// Writes `x` as PNG or PGM/PPM depending on the file extension.
pub fn write_image(x: &Image, path: &Path) -> Result<(), ImageError> {
    let format = Format::from_path(path).ok_or_else(|| ImageError::UnsupportedFormat {
        path: path.to_path_buf(),
        what: "extension must be .png, .pgm, .ppm or .pnm".into(),
    })?;
    write_image_as(x, path, format)
}

pub fn write_image_as(x: &Image, path: &Path, format: Format) -> Result<(), ImageError> {
    if !x.is_finite() {
        return Err(ImageError::NonFinite(path.to_path_buf()));
    }
    let s = x.shape();
    if s.channels != 1 && s.channels != 3 {
        return Err(ImageError::ChannelCount {
            path: path.to_path_buf(),
            channels: s.channels,
        });
    }
    let interleaved = interleave(x);
    let file = fs::File::create(path).map_err(|e| ImageError::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Png => {
            let mut enc = png::Encoder::new(&mut out, s.width as u32, s.height as u32);
            enc.set_color(if s.channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| png_write_error(path, e))?;
            w.write_image_data(&interleaved).map_err(|e| png_write_error(path, e))?;
            w.finish().map_err(|e| png_write_error(path, e))?;
        }
        Format::Pnm => {
            let magic = if s.channels == 1 { "P5" } else { "P6" };
            write!(out, "{magic}\n{} {}\n255\n", s.width, s.height).map_err(|e| ImageError::io(path, e))?;
            out.write_all(&interleaved).map_err(|e| ImageError::io(path, e))?;
        }
    }
    out.flush().map_err(|e| ImageError::io(path, e))
}

fn png_write_error(path: &Path, e: png::EncodingError) -> ImageError {
    match e {
        png::EncodingError::IoError(source) => ImageError::io(path, source),
        other => ImageError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(other),
        },
    }
}

fn interleave(x: &Image) -> Vec<u8> {
    let s = x.shape();
    let mut out = Vec::with_capacity(s.len());
    for r in 0..s.height {
        for q in 0..s.width {
            for c in 0..s.channels {
                out.push(quantize(x.get(c, r, q)));
            }
        }
    }
    out
}

/// Builds a channel-major image from interleaved samples, keeping the first `keep` of every `stride`.
fn deinterleave(bytes: &[u8], height: usize, width: usize, stride: usize, keep: usize) -> Image {
    Image::from_fn(Shape::new(keep, height, width), |c, r, q| {
        f64::from(bytes[(r * width + q) * stride + c]) / 255.0
    })
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Image, ImageError> {
    let malformed = |e: png::DecodingError| ImageError::Malformed {
        path: path.to_path_buf(),
        format: "PNG",
        reason: e.to_string(),
    };
    let header = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(malformed)?;
    let info = header.info();
    let indexed = info.color_type == png::ColorType::Indexed;
    if info.bit_depth != png::BitDepth::Eight && !indexed {
        return Err(ImageError::UnsupportedDepth {
            path: path.to_path_buf(),
            depth: info.bit_depth as u32,
        });
    }
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    if indexed {
        decoder.set_transformations(png::Transformations::EXPAND);
    }
    let mut reader = decoder.read_info().map_err(malformed)?;
    let size = reader.output_buffer_size().ok_or_else(|| ImageError::Malformed {
        path: path.to_path_buf(),
        format: "PNG",
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(malformed)?;
    let (h, w) = (frame.height as usize, frame.width as usize);
    let (stride, keep) = match frame.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => unreachable!("palette expanded above"),
    };
    // rows are packed without padding at 8 bits per sample
    Ok(deinterleave(&buf[..frame.buffer_size()], h, w, stride, keep))
}

fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<Image, ImageError> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let format = if channels == 1 { "PGM" } else { "PPM" };
    let malformed = |reason: String| ImageError::Malformed {
        path: path.to_path_buf(),
        format,
        reason,
    };
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and comments before each header field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(format!("missing {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields[i] = text.parse().map_err(|_| malformed(format!("{name} {text} is out of range")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("header must end with a single whitespace byte".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(malformed(format!("empty {w}x{h} image")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(format!("maxval {maxval} outside 1..=65535")));
    }
    if maxval != 255 {
        let depth = 64 - maxval.leading_zeros();
        return Err(ImageError::UnsupportedDepth {
            path: path.to_path_buf(),
            depth,
        });
    }
    let (w, h) = (w as usize, h as usize);
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| malformed("dimensions overflow".into()))?;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(malformed(format!("expected {need} data bytes, found {}", data.len())));
    }
    Ok(deinterleave(&data[..need], h, w, channels, channels))
}
