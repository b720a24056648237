//! Binary PPM (P6) and PGM (P5) readers/writers, maxval 255.
//!
//! Values are scaled by 1/255 on read. On write they are clamped to [0,1],
//! scaled by 255 and rounded half away from zero.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads a binary P6 image into a 3×H×W tensor in [0,1].
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_netpbm(&bytes, b"P6", 3)
        .map_err(|msg| Error::Parse(format!("{}: {msg}", path.display())))?;
    planar_from_interleaved(parsed)
}

/// Reads a binary P5 image into a 1×H×W tensor in [0,1].
pub fn read_pgm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_netpbm(&bytes, b"P5", 1)
        .map_err(|msg| Error::Parse(format!("{}: {msg}", path.display())))?;
    planar_from_interleaved(parsed)
}

/// Writes a 3×H×W tensor as binary P6.
pub fn write_ppm(tensor: &Tensor<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = tensor.chw()?;
    if c != 3 {
        return Err(Error::Shape(format!("P6 needs 3 channels, got {c}")));
    }
    let mut payload = Vec::with_capacity(h * w * 3);
    let plane = h * w;
    for px in 0..plane {
        for ch in 0..3 {
            payload.push(quantize(tensor.data()[ch * plane + px]));
        }
    }
    write_netpbm(path, b"P6", w, h, &payload)
}

/// Writes a 1×H×W (or H×W) tensor as binary P5.
pub fn write_pgm(tensor: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w) = match tensor.rank() {
        3 => {
            let (c, h, w) = tensor.chw()?;
            if c != 1 {
                return Err(Error::Shape(format!("P5 needs 1 channel, got {c}")));
            }
            (h, w)
        }
        2 => (tensor.dims()[0], tensor.dims()[1]),
        r => return Err(Error::Shape(format!("P5 writer needs rank 2 or 3, got {r}"))),
    };
    let payload: Vec<u8> = tensor.data().iter().map(|&v| quantize(v)).collect();
    write_netpbm(path, b"P5", w, h, &payload)
}

fn write_netpbm(path: &Path, magic: &[u8], w: usize, h: usize, payload: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(payload.len() + 32);
    out.extend_from_slice(magic);
    out.push(b'\n');
    out.extend_from_slice(format!("{w} {h}\n255\n").as_bytes());
    out.extend_from_slice(payload);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

struct Parsed {
    w: usize,
    h: usize,
    channels: usize,
    /// Interleaved samples, row-major.
    payload: Vec<u8>,
}

/// Header grammar: magic, then three whitespace-separated decimal tokens
/// (width, height, maxval) with `#` comments allowed, then a single
/// whitespace byte before the binary payload.
fn parse_netpbm(
    bytes: &[u8],
    magic: &[u8],
    channels: usize,
) -> std::result::Result<Parsed, String> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(magic)
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated or malformed header".into());
        }
        let token = std::str::from_utf8(&bytes[start..pos]).expect("digits are ascii");
        *field = token.parse().map_err(|_| format!("bad header token {token:?}"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, need 255"));
    }
    if w == 0 || h == 0 {
        return Err(format!("degenerate dimensions {w}x{h}"));
    }
    // exactly one whitespace byte separates header and payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator before payload".into());
    }
    pos += 1;
    let expected = w * h * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(format!(
            "payload truncated: need {expected} bytes, found {}",
            payload.len()
        ));
    }
    Ok(Parsed { w, h, channels, payload: payload[..expected].to_vec() })
}

fn planar_from_interleaved(p: Parsed) -> Result<Tensor<f32>> {
    let plane = p.w * p.h;
    let mut data = vec![0.0f32; p.channels * plane];
    for px in 0..plane {
        for ch in 0..p.channels {
            data[ch * plane + px] = p.payload[px * p.channels + ch] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[p.channels, p.h, p.w], data)
}
