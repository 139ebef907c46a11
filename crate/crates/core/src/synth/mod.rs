//! Synthetic push-frame bursts with known ground truth.
//!
//! Frame `i` satisfies `v_0(x) = v_i(A_i(x + i d(x)))` where
//! `d(x) = gain * elevation(x) * baseline`. Rendering is by inverse mapping:
//! for every output pixel `y` the scene point `x` solving
//! `x + i d(x) = A_i^{-1} y` is found by fixed-point iteration and the
//! texture is sampled there with quintic splines.

mod config;
mod scenes;

pub use config::{load_scene_config, scene_from_config, SceneKind};
pub use scenes::{band_limited_texture, checkerboard_burst, checkerboard_value, scene_preset};

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::burst::{Burst, Frame};
use crate::error::{Error, Result};
use crate::flow::write_flo;
use crate::image::{save_image, AffineField, AffineTransform, FlowField, Image, Mask, SplineImage, SplineOrder};
use crate::par;
use crate::plane_parallax::write_affinities;

/// Rectangle in reference coordinates moving by `velocity` pixels per frame
/// step on top of the ground motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mover {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub velocity: (f64, f64),
}

impl Mover {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    /// Ground albedo in reference coordinates.
    pub texture: Image,
    /// Relative elevation, same dimensions as `texture`.
    pub elevation: Image,
    /// Disparity in pixels per elevation unit per frame step.
    pub parallax_gain: f64,
    /// Unit parallax direction.
    pub baseline: (f64, f64),
    /// Half-width of the uniform perturbation of the linear part of `A_i`;
    /// translations are perturbed by the same amount times half the image size.
    pub affine_jitter: f64,
    pub noise_sigma: f64,
    /// Odd; frames are indexed `-(n-1)/2 ..= (n-1)/2`.
    pub n_frames: usize,
    pub movers: Vec<Mover>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(texture: Image, elevation: Image) -> Self {
        SceneSpec {
            texture,
            elevation,
            parallax_gain: 0.5,
            baseline: (1.0, 0.0),
            affine_jitter: 0.0,
            noise_sigma: 0.0,
            n_frames: 9,
            movers: Vec::new(),
            seed: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.texture.dims()
    }

    pub fn indices(&self) -> Vec<i32> {
        let h = (self.n_frames / 2) as i32;
        (-h..=h).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.texture.dims() != self.elevation.dims() {
            return Err(Error::Scene(format!(
                "texture {:?} and elevation {:?} dimensions differ",
                self.texture.dims(),
                self.elevation.dims()
            )));
        }
        if !(self.parallax_gain >= 0.0 && self.parallax_gain.is_finite()) {
            return Err(Error::Scene(format!("parallax_gain must be >= 0, got {}", self.parallax_gain)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Scene(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(0.0..0.1).contains(&self.affine_jitter) {
            return Err(Error::Scene(format!("affine_jitter must be in [0, 0.1), got {}", self.affine_jitter)));
        }
        if self.n_frames < 3 || self.n_frames.is_multiple_of(2) {
            return Err(Error::Scene(format!("n_frames must be odd and >= 3, got {}", self.n_frames)));
        }
        let norm = self.baseline.0.hypot(self.baseline.1);
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Scene(format!("baseline must be a unit vector, norm is {norm}")));
        }
        if !self.elevation.is_finite() || !self.texture.is_finite() {
            return Err(Error::Scene("texture and elevation must be finite".into()));
        }
        Ok(())
    }

    /// `gain * elevation * baseline` at every pixel.
    pub fn disparity(&self) -> FlowField {
        let (w, h) = self.dims();
        let (bx, by) = self.baseline;
        FlowField::from_fn(w, h, |x, y| {
            let e = self.parallax_gain * self.elevation.get(x, y) as f64;
            (e * bx, e * by)
        })
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// `A_i` after folding in the gauge.
    pub affinities: BTreeMap<i32, AffineTransform>,
    /// Disparity with its best-fit affine field removed.
    pub disparity: FlowField,
    /// Affinities and disparity as drawn, before gauge normalization.
    pub raw_affinities: BTreeMap<i32, AffineTransform>,
    pub raw_disparity: FlowField,
    pub gauge: AffineField,
    /// Gauge-normalized per-frame motion including movers.
    pub motion: FlowField,
    /// Pixels covered by a mover in the reference frame.
    pub mover_mask: Mask,
    pub elevation: Image,
}

impl GroundTruth {
    /// Exact displacement from the reference to frame `i`:
    /// `A_i(x + i d(x)) - x` in the raw parametrization.
    pub fn flow(&self, index: i32) -> Option<FlowField> {
        let a = self.raw_affinities.get(&index)?;
        let d = &self.raw_disparity;
        let k = index as f64;
        Some(FlowField::from_fn(d.width(), d.height(), |x, y| {
            let (du, dv) = d.get(x, y);
            let (px, py) = a.apply(x as f64 + k * du, y as f64 + k * dv);
            (px - x as f64, py - y as f64)
        }))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBurst {
    pub burst: Burst,
    pub truth: GroundTruth,
}

/// `k J B` folded into `A`, with `J` the linear part of `A`.
fn fold_with_jacobian(a: &AffineTransform, k: f64, b: &AffineField) -> AffineTransform {
    let jb = AffineField {
        ux: a.m11 * b.ux + a.m12 * b.vx,
        uy: a.m11 * b.uy + a.m12 * b.vy,
        u0: a.m11 * b.u0 + a.m12 * b.v0,
        vx: a.m21 * b.ux + a.m22 * b.vx,
        vy: a.m21 * b.uy + a.m22 * b.vy,
        v0: a.m21 * b.u0 + a.m22 * b.v0,
    };
    a.plus_field(k, &jb)
}

fn frame_rng(seed: u64, index: i32, kind: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index as i64 + (1 << 31)) as u64) << 2 | kind);
    rng
}

const STREAM_JITTER: u64 = 0;
const STREAM_NOISE: u64 = 1;

fn draw_affinity(spec: &SceneSpec, index: i32) -> AffineTransform {
    if index == 0 || spec.affine_jitter == 0.0 {
        return AffineTransform::identity();
    }
    let j = spec.affine_jitter;
    let (w, h) = spec.dims();
    let half = w.max(h) as f64 / 2.0;
    let mut rng = frame_rng(spec.seed, index, STREAM_JITTER);
    let mut u = || rng.random_range(-j..=j);
    AffineTransform::new(1.0 + u(), u(), u(), 1.0 + u(), u() * half, u() * half)
}

/// Solves `x + k (d(x) + extra) = z` by fixed-point iteration.
fn preimage(z: (f64, f64), k: f64, extra: (f64, f64), disparity: &dyn Fn(f64, f64) -> (f64, f64)) -> (f64, f64) {
    let mut x = (z.0 - k * extra.0, z.1 - k * extra.1);
    for _ in 0..50 {
        let (du, dv) = disparity(x.0, x.1);
        let next = (z.0 - k * (du + extra.0), z.1 - k * (dv + extra.1));
        let step = (next.0 - x.0).abs().max((next.1 - x.1).abs());
        x = next;
        if step < 1e-12 {
            break;
        }
    }
    x
}

fn check_displacement(spec: &SceneSpec, affinities: &BTreeMap<i32, AffineTransform>, d: &FlowField) -> Result<()> {
    let (w, h) = spec.dims();
    let limit = 0.25 * w.min(h) as f64;
    let vmax = spec
        .movers
        .iter()
        .map(|m| m.velocity.0.hypot(m.velocity.1))
        .fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for (&i, a) in affinities {
        let k = i as f64;
        for y in 0..h {
            for x in 0..w {
                let (du, dv) = d.get(x, y);
                let (px, py) = a.apply(x as f64 + k * du, y as f64 + k * dv);
                worst = worst.max((px - x as f64).hypot(py - y as f64) + k.abs() * vmax);
            }
        }
    }
    if worst > limit {
        return Err(Error::Scene(format!(
            "maximum displacement {worst:.2} px exceeds 25% of the image size ({limit:.2} px)"
        )));
    }
    Ok(())
}

/// Renders the burst described by `spec` and its ground truth.
pub fn generate_burst(spec: &SceneSpec) -> Result<SyntheticBurst> {
    spec.validate()?;
    let (w, h) = spec.dims();
    let indices = spec.indices();
    let raw_affinities: BTreeMap<i32, AffineTransform> =
        indices.iter().map(|&i| (i, draw_affinity(spec, i))).collect();
    for (i, a) in &raw_affinities {
        a.validate().map_err(|_| Error::Scene(format!("jittered affinity of frame {i} is degenerate")))?;
    }
    let raw_disparity = spec.disparity();
    check_displacement(spec, &raw_affinities, &raw_disparity)?;

    let texture = SplineImage::from_image(&spec.texture, SplineOrder::Quintic);
    let elevation = SplineImage::from_image(&spec.elevation, SplineOrder::Cubic);
    let (gain, (bx, by)) = (spec.parallax_gain, spec.baseline);
    let disparity = move |x: f64, y: f64| {
        let e = gain * elevation.sample(x, y);
        (e * bx, e * by)
    };

    let frames: Vec<Frame> = par::map_slice(&indices, |&i| {
        let a = raw_affinities[&i];
        let inv = a.inverse().expect("validated affinity is invertible");
        let k = i as f64;
        let mut data = vec![0.0f32; w * h];
        for (p, out) in data.iter_mut().enumerate() {
            let z = inv.apply((p % w) as f64, (p / w) as f64);
            let mut value = None;
            for m in spec.movers.iter().rev() {
                let xm = preimage(z, k, m.velocity, &disparity);
                if m.contains(xm.0, xm.1) {
                    value = Some(255.0 - texture.sample(xm.0, xm.1));
                    break;
                }
            }
            let value = value.unwrap_or_else(|| {
                let x = preimage(z, k, (0.0, 0.0), &disparity);
                texture.sample(x.0, x.1)
            });
            *out = value as f32;
        }
        if spec.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
            let mut rng = frame_rng(spec.seed, i, STREAM_NOISE);
            for v in data.iter_mut() {
                *v += normal.sample(&mut rng) as f32;
            }
        }
        Frame::new(i, Image::from_vec(w, h, data).expect("dimensions match"))
    });
    let burst = Burst::new(frames)?;

    let gauge = AffineField::fit(&raw_disparity);
    let disparity = remove_affine(&raw_disparity, &gauge);
    let affinities = raw_affinities
        .iter()
        .map(|(&i, a)| (i, fold_with_jacobian(a, i as f64, &gauge)))
        .collect();
    let mover_mask = Mask::from_fn(w, h, |x, y| spec.movers.iter().any(|m| m.contains(x as f64, y as f64)));
    let motion = FlowField::from_fn(w, h, |x, y| {
        let (du, dv) = disparity.get(x, y);
        match spec.movers.iter().rev().find(|m| m.contains(x as f64, y as f64)) {
            Some(m) => (du + m.velocity.0, dv + m.velocity.1),
            None => (du, dv),
        }
    });
    Ok(SyntheticBurst {
        burst,
        truth: GroundTruth {
            affinities,
            disparity,
            raw_affinities,
            raw_disparity,
            gauge,
            motion,
            mover_mask,
            elevation: spec.elevation.clone(),
        },
    })
}

pub(crate) fn remove_affine(flow: &FlowField, field: &AffineField) -> FlowField {
    FlowField::from_fn(flow.width(), flow.height(), |x, y| {
        let (u, v) = flow.get(x, y);
        let (gu, gv) = field.eval(x as f64, y as f64);
        (u - gu, v - gv)
    })
}

/// Mean endpoint error over the pixels selected by `mask` (all when `None`).
pub fn flow_epe(estimate: &FlowField, truth: &FlowField, mask: Option<&Mask>) -> Result<f64> {
    if estimate.dims() != truth.dims() {
        return Err(Error::Contract(format!(
            "flow dimensions differ: {:?} vs {:?}",
            estimate.dims(),
            truth.dims()
        )));
    }
    if let Some(m) = mask {
        if (m.width(), m.height()) != truth.dims() {
            return Err(Error::Contract("mask dimensions differ from flow".into()));
        }
    }
    let selected = |k: usize| mask.is_none_or(|m| m.data()[k]);
    let count = (0..truth.len()).filter(|&k| selected(k)).count();
    if count == 0 {
        return Err(Error::EmptyMetric("endpoint error over an empty mask".into()));
    }
    let (eu, ev, tu, tv) = (estimate.u(), estimate.v(), truth.u(), truth.v());
    let total = par::sum_by(truth.len(), |k| {
        if selected(k) {
            (eu[k] - tu[k]).hypot(ev[k] - tv[k])
        } else {
            0.0
        }
    });
    Ok(total / count as f64)
}

/// Mask excluding a border of `margin` pixels.
pub fn interior_mask(width: usize, height: usize, margin: usize) -> Mask {
    Mask::from_fn(width, height, |x, y| {
        x >= margin && y >= margin && x + margin < width && y + margin < height
    })
}

/// Writes `frame_<i>.pfm` for every frame plus `gt_disparity.flo`,
/// `gt_affinities.txt` and `gt_elevation.pfm`.
pub fn write_synthetic(out: &SyntheticBurst, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in out.burst.frames() {
        save_image(&f.image, dir.join(frame_file_name(f.index, "pfm")))?;
    }
    write_flo(&out.truth.disparity, dir.join("gt_disparity.flo"))?;
    write_flo(&out.truth.motion, dir.join("gt_motion.flo"))?;
    write_affinities(dir.join("gt_affinities.txt"), &out.truth.affinities)?;
    save_image(&out.truth.elevation, dir.join("gt_elevation.pfm"))
}

pub fn frame_file_name(index: i32, extension: &str) -> String {
    format!("frame_{index}.{extension}")
}
