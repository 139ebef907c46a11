//! Affinity text files: one line per frame, `i m11 m12 m21 m22 tx ty`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::io::write_file;
use crate::image::AffineTransform;

const SIGNIFICANT_DIGITS: usize = 12;

/// Formats `x` like C's `%.{digits}g`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if exp < -4 || exp >= digits as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn encode_affinities(affinities: &BTreeMap<i32, AffineTransform>) -> String {
    let mut out = String::new();
    for (i, a) in affinities {
        write!(out, "{i}").unwrap();
        for c in a.coefficients() {
            write!(out, " {}", format_significant(c, SIGNIFICANT_DIGITS)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_affinities(text: &str, path: &Path) -> Result<BTreeMap<i32, AffineTransform>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::format(path, format!("line {}: expected 7 fields, got {}", n + 1, fields.len())));
        }
        let index: i32 = fields[0]
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad frame index {:?}", n + 1, fields[0])))?;
        let mut c = [0.0; 6];
        for (slot, f) in c.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("line {}: bad coefficient {f:?}", n + 1)))?;
        }
        if out.insert(index, AffineTransform::from_coefficients(c)).is_some() {
            return Err(Error::format(path, format!("line {}: duplicate frame index {index}", n + 1)));
        }
    }
    Ok(out)
}

pub fn write_affinities(path: impl AsRef<Path>, affinities: &BTreeMap<i32, AffineTransform>) -> Result<()> {
    write_file(path.as_ref(), encode_affinities(affinities).as_bytes())
}

pub fn read_affinities(path: impl AsRef<Path>) -> Result<BTreeMap<i32, AffineTransform>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_affinities(&text, path)
}
