use std::collections::BTreeMap;

use super::{check_affinities, check_disparity};
use crate::burst::Burst;
use crate::error::{Error, Result};
use crate::image::{AffineTransform, FlowField, Image, SplineImage, SplineOrder};
use crate::par;

pub const DEFAULT_SPLAT_SIGMA: f64 = 0.5;

/// Accumulated weight below which a high-resolution pixel falls back to the
/// upsampled reference.
const MIN_WEIGHT: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SrReport {
    pub image: Image,
    /// High-resolution pixels filled from the upsampled reference.
    pub fallback_pixels: usize,
}

/// Reference position `x` with `A x + k d(x) = y`, by fixed-point iteration.
fn inverse_map(inv: &AffineTransform, k: f64, d: &FlowField, y: (f64, f64)) -> (f64, f64) {
    let mut x = inv.apply(y.0, y.1);
    if k == 0.0 {
        return x;
    }
    for _ in 0..30 {
        let (du, dv) = d.sample_bilinear(x.0, x.1);
        let next = inv.apply(y.0 - k * du, y.1 - k * dv);
        let step = (next.0 - x.0).abs().max((next.1 - x.1).abs());
        x = next;
        if step < 1e-9 {
            break;
        }
    }
    x
}

/// Shift-and-add fusion on the reference grid zoomed by `zoom`.
///
/// Every valid sample of frame `i` is mapped back to the reference position
/// `x` solving `A_i x + i d(x) = y` and splatted there with a Gaussian of
/// standard deviation `sigma` high-resolution pixels. The output is the
/// weight-normalized sum.
pub fn super_resolve(
    frames: &Burst,
    affinities: &BTreeMap<i32, AffineTransform>,
    d: &FlowField,
    zoom: usize,
    sigma: f64,
) -> Result<SrReport> {
    if !(2..=3).contains(&zoom) {
        return Err(Error::InvalidParam(format!("super-resolution zoom must be 2 or 3, got {zoom}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParam(format!("splat sigma must be positive, got {sigma}")));
    }
    check_affinities(frames, affinities)?;
    check_disparity(frames, d)?;
    let (w, h) = frames.dims();
    let (zw, zh) = (w * zoom, h * zoom);
    let z = zoom as f64;
    let radius = (3.0 * sigma).ceil() as isize;
    let inv_2s2 = 1.0 / (2.0 * sigma * sigma);

    let grids: Vec<(Vec<f64>, Vec<f64>)> = par::map_slice(frames.frames(), |f| {
        let inv = affinities[&f.index].inverse().expect("validated affinity");
        let k = f.index as f64;
        let mut num = vec![0.0; zw * zh];
        let mut den = vec![0.0; zw * zh];
        for sy in 0..h {
            for sx in 0..w {
                if f.mask.as_ref().is_some_and(|m| !m.get(sx, sy)) {
                    continue;
                }
                let (rx, ry) = inverse_map(&inv, k, d, (sx as f64, sy as f64));
                let (hx, hy) = (rx * z, ry * z);
                let value = f.image.get(sx, sy) as f64;
                let (cx, cy) = (hx.round() as isize, hy.round() as isize);
                for py in cy - radius..=cy + radius {
                    if py < 0 || py >= zh as isize {
                        continue;
                    }
                    let dy2 = (py as f64 - hy).powi(2);
                    for px in cx - radius..=cx + radius {
                        if px < 0 || px >= zw as isize {
                            continue;
                        }
                        let wgt = (-((px as f64 - hx).powi(2) + dy2) * inv_2s2).exp();
                        let idx = py as usize * zw + px as usize;
                        num[idx] += wgt * value;
                        den[idx] += wgt;
                    }
                }
            }
        }
        (num, den)
    });

    let mut num = vec![0.0; zw * zh];
    let mut den = vec![0.0; zw * zh];
    for (n, dd) in &grids {
        for k in 0..num.len() {
            num[k] += n[k];
            den[k] += dd[k];
        }
    }

    let reference = SplineImage::from_image(&frames.reference()?.image, SplineOrder::Quintic);
    let mut fallback = 0;
    let data: Vec<f32> = (0..zw * zh)
        .map(|k| {
            if den[k] >= MIN_WEIGHT {
                (num[k] / den[k]) as f32
            } else {
                fallback += 1;
                reference.sample((k % zw) as f64 / z, (k / zw) as f64 / z) as f32
            }
        })
        .collect();
    Ok(SrReport {
        image: Image::from_vec(zw, zh, data)?,
        fallback_pixels: fallback,
    })
}
