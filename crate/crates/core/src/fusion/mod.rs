//! Stack alignment, the temporal standard deviation diagnostic,
//! shift-and-add super-resolution and surface models from disparity.
//!
//! High-resolution grids use the corner convention: pixel `X` of a grid
//! zoomed by `z` sits at reference position `X / z`.

mod dsm;
mod metrics;
mod sr;

pub use dsm::{disparity_to_dsm, SurfaceModel};
pub use metrics::{ncc, pearson, remove_plane, total_variation, total_variation_image};
pub use sr::{super_resolve, SrReport, DEFAULT_SPLAT_SIGMA};

use std::collections::BTreeMap;

use crate::burst::Burst;
use crate::error::{Error, Result};
use crate::image::{resample, AffineTransform, FlowField, Image, Mask, SplineImage, SplineOrder};
use crate::par;

/// Frames resampled onto the (possibly zoomed) reference grid.
#[derive(Debug, Clone)]
pub struct AlignedStack {
    pub indices: Vec<i32>,
    pub layers: Vec<Image>,
    pub masks: Vec<Mask>,
    pub zoom: usize,
}

impl AlignedStack {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.layers.first().map(Image::dims).unwrap_or((0, 0))
    }

    /// Pixels valid in every layer.
    pub fn full_validity(&self) -> Mask {
        let (w, h) = self.dims();
        let mut out = Mask::filled(w, h, true);
        for m in &self.masks {
            out = out.and(m);
        }
        out
    }
}

pub(crate) fn check_affinities(frames: &Burst, affinities: &BTreeMap<i32, AffineTransform>) -> Result<()> {
    for i in frames.indices() {
        match affinities.get(&i) {
            None => return Err(Error::Contract(format!("no affinity for frame {i}"))),
            Some(a) => a.validate()?,
        }
    }
    Ok(())
}

pub(crate) fn check_disparity(frames: &Burst, d: &FlowField) -> Result<()> {
    if d.dims() != frames.dims() {
        return Err(Error::Contract(format!(
            "disparity {:?} does not match frames {:?}",
            d.dims(),
            frames.dims()
        )));
    }
    if !d.is_finite() {
        return Err(Error::Contract("disparity has non-finite values".into()));
    }
    Ok(())
}

/// Validity of `mask` at a real position, by nearest pixel.
pub(crate) fn mask_at(mask: &Mask, x: f64, y: f64) -> bool {
    let (rx, ry) = (x.round(), y.round());
    rx >= 0.0
        && ry >= 0.0
        && (rx as usize) < mask.width()
        && (ry as usize) < mask.height()
        && mask.get(rx as usize, ry as usize)
}

/// Resamples frame `i` at `A_i x + i d(x)` on the reference grid zoomed by
/// `zoom`, with quintic splines. `d` is interpolated bilinearly between
/// reference pixels.
pub fn align_stack(
    frames: &Burst,
    affinities: &BTreeMap<i32, AffineTransform>,
    d: &FlowField,
    zoom: usize,
) -> Result<AlignedStack> {
    if zoom == 0 {
        return Err(Error::InvalidParam("zoom must be at least 1".into()));
    }
    check_affinities(frames, affinities)?;
    check_disparity(frames, d)?;
    let (w, h) = frames.dims();
    let (zw, zh) = (w * zoom, h * zoom);
    let z = zoom as f64;
    let aligned: Vec<(Image, Mask)> = par::map_slice(frames.frames(), |f| {
        let a = affinities[&f.index];
        let k = f.index as f64;
        let spline = SplineImage::from_image(&f.image, SplineOrder::Quintic);
        let map = |px: usize, py: usize| {
            let (x, y) = (px as f64 / z, py as f64 / z);
            let (du, dv) = if zoom == 1 { d.get(px, py) } else { d.sample_bilinear(x, y) };
            let (ax, ay) = a.apply(x, y);
            (ax + k * du, ay + k * dv)
        };
        let (img, mut mask) = resample(&spline, zw, zh, map);
        if zoom > 1 {
            // reference positions past the last pixel are extrapolated, not observed
            mask = mask.and(&Mask::from_fn(zw, zh, |px, py| {
                px as f64 / z <= (w - 1) as f64 && py as f64 / z <= (h - 1) as f64
            }));
        }
        if let Some(fm) = &f.mask {
            let carried = Mask::from_fn(zw, zh, |px, py| {
                let (sx, sy) = map(px, py);
                mask_at(fm, sx, sy)
            });
            mask = mask.and(&carried);
        }
        let img = Image::from_fn(zw, zh, |x, y| if mask.get(x, y) { img.get(x, y) } else { 0.0 });
        (img, mask)
    });
    let (layers, masks) = aligned.into_iter().unzip();
    Ok(AlignedStack {
        indices: frames.indices(),
        layers,
        masks,
        zoom,
    })
}

/// Per-pixel population standard deviation of an aligned stack.
#[derive(Debug, Clone)]
pub struct TemporalStd {
    /// Standard deviation over the valid layers at each pixel (0 with fewer
    /// than two).
    pub map: Image,
    /// Pixels valid in every layer.
    pub full_validity: Mask,
    /// Mean of `map` over fully valid pixels.
    pub mean: f64,
}

impl TemporalStd {
    /// Mean of the map over fully valid pixels inside `region`.
    pub fn mean_over(&self, region: &Mask) -> Result<f64> {
        mean_over(&self.map, &self.full_validity.and(region))
    }
}

pub(crate) fn mean_over(img: &Image, mask: &Mask) -> Result<f64> {
    let count = mask.count();
    if count == 0 {
        return Err(Error::EmptyMetric("no pixel selected".into()));
    }
    let data = img.data();
    let sel = mask.data();
    Ok(par::sum_by(data.len(), |k| if sel[k] { data[k] as f64 } else { 0.0 }) / count as f64)
}

pub fn temporal_std(stack: &AlignedStack) -> Result<TemporalStd> {
    if stack.is_empty() {
        return Err(Error::EmptyMetric("empty stack".into()));
    }
    let (w, h) = stack.dims();
    let n = w * h;
    let values: Vec<f32> = par::map_range(n, |p| {
        let (mut count, mut sum) = (0usize, 0.0f64);
        for (layer, mask) in stack.layers.iter().zip(&stack.masks) {
            if mask.data()[p] {
                count += 1;
                sum += layer.data()[p] as f64;
            }
        }
        if count < 2 {
            return 0.0;
        }
        let mean = sum / count as f64;
        let mut var = 0.0;
        for (layer, mask) in stack.layers.iter().zip(&stack.masks) {
            if mask.data()[p] {
                var += (layer.data()[p] as f64 - mean).powi(2);
            }
        }
        (var / count as f64).sqrt() as f32
    });
    let map = Image::from_vec(w, h, values)?;
    let full_validity = stack.full_validity();
    let mean = mean_over(&map, &full_validity)
        .map_err(|_| Error::EmptyMetric("no pixel is valid in every layer".into()))?;
    Ok(TemporalStd {
        map,
        full_validity,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::burst::Frame;

    fn identities(burst: &Burst) -> BTreeMap<i32, AffineTransform> {
        burst.indices().into_iter().map(|i| (i, AffineTransform::identity())).collect()
    }

    #[test]
    fn identical_frames_align_to_equal_layers() {
        let img = Image::from_fn(20, 16, |x, y| ((x * 7 + y * 3) % 11) as f32);
        let burst = Burst::from_images((-1..=1).map(|i| (i, img.clone()))).unwrap();
        let stack = align_stack(&burst, &identities(&burst), &FlowField::zeros(20, 16), 1).unwrap();
        for l in &stack.layers {
            for (a, b) in l.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-4);
            }
        }
        let std = temporal_std(&stack).unwrap();
        assert!(std.mean < 1e-6);
        assert_eq!(std.full_validity.count(), 320);
    }

    #[test]
    fn population_convention() {
        let stack = AlignedStack {
            indices: vec![0, 1],
            layers: vec![Image::filled(2, 2, 0.0), Image::filled(2, 2, 2.0)],
            masks: vec![Mask::filled(2, 2, true); 2],
            zoom: 1,
        };
        let s = temporal_std(&stack).unwrap();
        assert!(s.map.data().iter().all(|&v| (v - 1.0).abs() < 1e-7));
        assert!((s.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_full_validity_is_an_error() {
        let mut m0 = Mask::filled(2, 1, true);
        let mut m1 = Mask::filled(2, 1, true);
        m0 = m0.and(&Mask::from_fn(2, 1, |x, _| x == 0));
        m1 = m1.and(&Mask::from_fn(2, 1, |x, _| x == 1));
        let stack = AlignedStack {
            indices: vec![0, 1],
            layers: vec![Image::filled(2, 1, 1.0); 2],
            masks: vec![m0, m1],
            zoom: 1,
        };
        assert!(matches!(temporal_std(&stack), Err(Error::EmptyMetric(_))));
    }

    #[test]
    fn zoom_single_frame_is_spline_upsampling() {
        let img = Image::from_fn(12, 10, |x, y| ((x as f32) * 0.7).sin() * 50.0 + y as f32);
        let burst = Burst::new(vec![Frame::new(0, img.clone())]).unwrap();
        let stack = align_stack(&burst, &identities(&burst), &FlowField::zeros(12, 10), 2).unwrap();
        assert_eq!(stack.dims(), (24, 20));
        let spline = SplineImage::from_image(&img, SplineOrder::Quintic);
        for (py, px) in [(0, 0), (5, 7), (18, 22)] {
            let want = spline.sample(px as f64 / 2.0, py as f64 / 2.0) as f32;
            assert!((stack.layers[0].get(px, py) - want).abs() < 1e-4);
        }
        assert!(stack.masks[0].get(22, 18));
        assert!(!stack.masks[0].get(23, 18));
    }

    #[test]
    fn missing_affinity() {
        let burst = Burst::from_images((0..2).map(|i| (i, Image::filled(8, 8, 1.0)))).unwrap();
        let mut a = identities(&burst);
        a.remove(&1);
        assert!(matches!(
            align_stack(&burst, &a, &FlowField::zeros(8, 8), 1),
            Err(Error::Contract(_))
        ));
    }
}
