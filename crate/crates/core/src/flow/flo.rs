//! Optical-flow binary files: float magic 202021.25, int32 width and height,
//! then interleaved `(u, v)` float32 pairs, row-major, all little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::io::write_file;
use crate::image::FlowField;

const MAGIC: f32 = 202021.25;

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode(flow))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

pub(crate) fn encode(flow: &FlowField) -> Vec<u8> {
    let (w, h) = flow.dims();
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn decode(path: &Path, bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::format(path, "flow header too short"));
    }
    let word = |k: usize| [bytes[4 * k], bytes[4 * k + 1], bytes[4 * k + 2], bytes[4 * k + 3]];
    if f32::from_le_bytes(word(0)) != MAGIC {
        return Err(Error::format(path, "bad flow magic"));
    }
    let w = i32::from_le_bytes(word(1));
    let h = i32::from_le_bytes(word(2));
    if w <= 0 || h <= 0 {
        return Err(Error::format(path, format!("bad flow dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let n = w * h;
    if bytes.len() < 12 + 8 * n {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated flow payload"),
        ));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for k in 0..n {
        u.push(f32::from_le_bytes(word(3 + 2 * k)) as f64);
        v.push(f32::from_le_bytes(word(4 + 2 * k)) as f64);
    }
    FlowField::from_vecs(w, h, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let flow = FlowField::from_fn(3, 2, |x, y| (x as f64 + 0.5, -(y as f64) * 0.25));
        let bytes = encode(&flow);
        assert_eq!(&bytes[..4], &202021.25f32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3i32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2i32.to_le_bytes());
        // second pixel of the first row: u = 1.5, v = 0
        assert_eq!(&bytes[20..24], &1.5f32.to_le_bytes());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.flo");
        write_flo(&flow, &p).unwrap();
        assert_eq!(read_flo(&p).unwrap(), flow);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.flo");
        fs::write(&p, [0u8; 20]).unwrap();
        assert!(matches!(read_flo(&p), Err(Error::Format { .. })));
        let mut bytes = encode(&FlowField::zeros(4, 4));
        bytes.truncate(40);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_flo(&p), Err(Error::Io { .. })));
    }
}
