//! PGM (binary P5) and grayscale PFM reading and writing.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Pgm,
    Pfm,
}

fn kind_from_extension(path: &Path) -> Option<Kind> {
    match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
        "pgm" => Some(Kind::Pgm),
        "pfm" => Some(Kind::Pfm),
        _ => None,
    }
}

/// Loads a PGM or PFM file. PGM samples are mapped to `[0, 255]`
/// (`v * 255 / maxval`); PFM samples are returned unscaled.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(..2) {
        Some(b"P5") => decode_pgm(path, &bytes),
        Some(b"Pf") => decode_pfm(path, &bytes),
        Some(b"PF") => Err(Error::format(path, "colour PFM is not supported")),
        _ => Err(Error::format(path, "unrecognised magic number")),
    }
}

/// Writes PFM (lossless) or 8-bit PGM (clamped to `[0, 255]`, rounded half
/// away from zero) depending on the file extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match kind_from_extension(path) {
        Some(Kind::Pfm) => encode_pfm(img),
        Some(Kind::Pgm) => encode_pgm(img),
        None => return Err(Error::format(path, "unknown image extension (expected .pgm or .pfm)")),
    };
    write_file(path, &bytes)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn truncated(path: &Path) -> Error {
    Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated image payload"),
    )
}

/// Reads `count` whitespace-separated header tokens, honouring `#` comments.
/// Returns the tokens and the offset just past the single whitespace byte
/// that terminates the last token.
fn header_tokens(path: &Path, bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "header ended early"));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::format(path, "non-ASCII header"))?;
        tokens.push(tok.to_string());
    }
    if pos >= bytes.len() {
        return Err(truncated(path));
    }
    Ok((tokens, pos + 1))
}

fn parse_dim(path: &Path, tok: &str) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::format(path, format!("bad dimension {tok:?}"))),
    }
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let (tok, offset) = header_tokens(path, bytes, 4)?;
    let width = parse_dim(path, &tok[1])?;
    let height = parse_dim(path, &tok[2])?;
    let maxval: u32 = tok[3]
        .parse()
        .ok()
        .filter(|m| (1..=65535).contains(m))
        .ok_or_else(|| Error::format(path, format!("bad maxval {:?}", tok[3])))?;
    let n = width * height;
    let payload = &bytes[offset..];
    let scale = 255.0 / maxval as f64;
    let data: Vec<f32> = if maxval < 256 {
        if payload.len() < n {
            return Err(truncated(path));
        }
        payload[..n].iter().map(|&b| (b as f64 * scale) as f32).collect()
    } else {
        if payload.len() < 2 * n {
            return Err(truncated(path));
        }
        payload[..2 * n]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 * scale) as f32)
            .collect()
    };
    Image::from_vec(width, height, data)
}

fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let (tok, offset) = header_tokens(path, bytes, 4)?;
    let width = parse_dim(path, &tok[1])?;
    let height = parse_dim(path, &tok[2])?;
    let scale: f64 = tok[3]
        .parse()
        .ok()
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| Error::format(path, format!("bad scale {:?}", tok[3])))?;
    let little = scale < 0.0;
    let n = width * height;
    let payload = &bytes[offset..];
    if payload.len() < 4 * n {
        return Err(truncated(path));
    }
    let mut data = vec![0.0f32; n];
    for (k, c) in payload[..4 * n].chunks_exact(4).enumerate() {
        let raw = [c[0], c[1], c[2], c[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // rows are stored bottom-to-top
        let (row, col) = (k / width, k % width);
        data[(height - 1 - row) * width + col] = v;
    }
    Image::from_vec(width, height, data)
}

fn encode_pfm(img: &Image) -> Vec<u8> {
    let (w, h) = img.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for row in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&img.get(x, row).to_le_bytes());
        }
    }
    out
}

fn encode_pgm(img: &Image) -> Vec<u8> {
    let (w, h) = img.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| to_byte(v)));
    out
}

/// Clamp to `[0, 255]` and round half away from zero.
pub(crate) fn to_byte(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.clamp(0.0, 255.0).round() as u8
}
