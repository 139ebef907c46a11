use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mover, SceneKind, SceneSpec};
use crate::burst::Burst;
use crate::error::Result;
use crate::image::{gaussian_blur, AffineTransform, Image};

/// Gaussian-filtered white noise rescaled to mean 128 and standard deviation 40.
pub fn band_limited_texture(width: usize, height: usize, sigma: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let noise = Image::from_vec(
        width,
        height,
        (0..width * height).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .expect("dimensions match");
    let blurred = gaussian_blur(&noise, sigma);
    let n = blurred.len() as f64;
    let mean = blurred.mean();
    let var = blurred.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { 40.0 / var.sqrt() } else { 0.0 };
    Image::from_fn(width, height, |x, y| (128.0 + (blurred.get(x, y) as f64 - mean) * scale) as f32)
}

fn smooth(elevation: Image, sigma: f64) -> Image {
    gaussian_blur(&elevation, sigma)
}

fn bump(width: usize, height: usize) -> Image {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let s = width.min(height) as f64 / 6.0;
    Image::from_fn(width, height, |x, y| {
        let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        (-r2 / (2.0 * s * s)).exp() as f32
    })
}

/// Four terraces rising along x, steps softened over a few pixels.
fn terraces(width: usize, height: usize) -> Image {
    let steps = 4.0;
    let flat = Image::from_fn(width, height, |x, _| {
        let t = x as f64 / width as f64 * steps;
        (t.floor() / (steps - 1.0)) as f32
    });
    smooth(flat, 2.0)
}

/// Rectangular blocks of random height on flat ground.
fn blocks(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b10c);
    let mut e = vec![0.0f32; width * height];
    let n = 6;
    for _ in 0..n {
        let bw = rng.random_range(width / 8..=width / 4).max(2);
        let bh = rng.random_range(height / 8..=height / 4).max(2);
        let x0 = rng.random_range(width / 10..width - bw - width / 10);
        let y0 = rng.random_range(height / 10..height - bh - height / 10);
        let z = rng.random_range(0.5f32..1.0);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                e[y * width + x] = e[y * width + x].max(z);
            }
        }
    }
    smooth(Image::from_vec(width, height, e).expect("dimensions match"), 1.5)
}

/// Default scene of the given kind: band-limited texture, elevation shaped
/// per `kind` with unit peak, gain 0.8 px per frame step, no jitter or noise.
pub fn scene_preset(kind: SceneKind, width: usize, height: usize, seed: u64) -> SceneSpec {
    let texture = band_limited_texture(width, height, 1.5, seed);
    let elevation = match kind {
        SceneKind::Flat | SceneKind::Mover => Image::new(width, height),
        SceneKind::Bump => bump(width, height),
        SceneKind::Ramp => terraces(width, height),
        SceneKind::Urban => blocks(width, height, seed),
    };
    let mut spec = SceneSpec::new(texture, elevation);
    spec.parallax_gain = 0.8;
    spec.seed = seed;
    if kind == SceneKind::Mover {
        let (w, h) = (width as f64, height as f64);
        spec.movers.push(Mover {
            x: (w * 0.3).round(),
            y: (h * 0.4).round(),
            width: (w * 0.2).round(),
            height: (h * 0.2).round(),
            velocity: (0.6, 0.0),
        });
    }
    spec
}

/// Smoothed binary checkerboard with the given period, values in `[28, 228]`.
pub fn checkerboard_value(x: f64, y: f64, period: f64) -> f64 {
    const SHARPNESS: f64 = 4.0;
    let s = (2.0 * std::f64::consts::PI * x / period).sin() * (2.0 * std::f64::consts::PI * y / period).sin();
    128.0 + 100.0 * (SHARPNESS * s).tanh() / SHARPNESS.tanh()
}

/// Point-sampled checkerboard frames, frame `i` translated by `shifts[k]`
/// (`v_i(y) = c(y - t_i)`), with the matching translations as affinities.
/// Frames are indexed symmetrically around 0; `shifts` must have odd length.
pub fn checkerboard_burst(
    width: usize,
    height: usize,
    period: f64,
    shifts: &[(f64, f64)],
) -> Result<(Burst, BTreeMap<i32, AffineTransform>)> {
    let h = (shifts.len() / 2) as i32;
    let mut frames = Vec::new();
    let mut affinities = BTreeMap::new();
    for (k, &(tx, ty)) in shifts.iter().enumerate() {
        let i = k as i32 - h;
        let img = Image::from_fn(width, height, |x, y| {
            checkerboard_value(x as f64 - tx, y as f64 - ty, period) as f32
        });
        frames.push((i, img));
        affinities.insert(i, AffineTransform::translation(tx, ty));
    }
    Ok((Burst::from_images(frames)?, affinities))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_statistics() {
        let t = band_limited_texture(64, 48, 1.5, 7);
        assert!((t.mean() - 128.0).abs() < 1e-3);
        let var = t.data().iter().map(|&v| (v as f64 - 128.0).powi(2)).sum::<f64>() / t.len() as f64;
        assert!((var.sqrt() - 40.0).abs() < 1e-2);
        assert_eq!(band_limited_texture(64, 48, 1.5, 7).data(), t.data());
    }

    #[test]
    fn presets_validate() {
        for kind in [SceneKind::Flat, SceneKind::Bump, SceneKind::Ramp, SceneKind::Urban, SceneKind::Mover] {
            let s = scene_preset(kind, 64, 64, 1);
            s.validate().unwrap();
            let peak = s.elevation.data().iter().cloned().fold(0.0f32, f32::max);
            match kind {
                SceneKind::Flat | SceneKind::Mover => assert_eq!(peak, 0.0),
                _ => assert!(peak > 0.4 && peak <= 1.0 + 1e-6, "{kind:?} peak {peak}"),
            }
        }
    }

    #[test]
    fn checkerboard_shifts() {
        let (burst, aff) = checkerboard_burst(16, 16, 2.5, &[(-0.25, 0.0), (0.0, 0.0), (0.5, 0.25)]).unwrap();
        assert_eq!(burst.indices(), vec![-1, 0, 1]);
        assert_eq!(aff[&1], AffineTransform::translation(0.5, 0.25));
        let f = &burst.get(1).unwrap().image;
        assert!((f.get(3, 4) as f64 - checkerboard_value(2.5, 3.75, 2.5)).abs() < 1e-4);
    }
}
