//! `key=value` scene descriptions.
//!
//! ```text
//! scene=bump            # flat | bump | ramp | urban | mover
//! width=128
//! height=128
//! n_frames=9
//! parallax_gain=0.8
//! elevation_scale=1
//! affine_jitter=0.002
//! noise_sigma=1
//! seed=42
//! baseline_x=1
//! baseline_y=0
//! texture_sigma=1.5
//! movers=38,51,26,26,0.6,0      # x,y,w,h,vx,vy; several separated by ';'
//! texture=path.pfm              # optional, replaces the generated texture
//! elevation=path.pfm            # optional, replaces the preset elevation
//! ```

use std::path::Path;
use std::str::FromStr;

use super::{band_limited_texture, scene_preset, Mover, SceneSpec};
use crate::error::{Error, Result};
use crate::image::{load_image, Image};
use crate::kv::KeyValues;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Flat,
    Bump,
    Ramp,
    Urban,
    Mover,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "flat" => SceneKind::Flat,
            "bump" => SceneKind::Bump,
            "ramp" => SceneKind::Ramp,
            "urban" => SceneKind::Urban,
            "mover" => SceneKind::Mover,
            other => return Err(Error::Config(format!("unknown scene kind {other:?}"))),
        })
    }
}

fn parse_movers(text: &str) -> Result<Vec<Mover>> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|m| {
            let v: Vec<f64> = m
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad mover {m:?}")))?;
            if v.len() != 6 {
                return Err(Error::Config(format!("mover {m:?} needs x,y,w,h,vx,vy")));
            }
            Ok(Mover {
                x: v[0],
                y: v[1],
                width: v[2],
                height: v[3],
                velocity: (v[4], v[5]),
            })
        })
        .collect()
}

/// Builds a scene from a parsed record, resolving relative paths against
/// `base_dir`. Unknown keys are rejected.
pub fn scene_from_config(mut kv: KeyValues, base_dir: &Path) -> Result<SceneSpec> {
    let kind: SceneKind = kv.take_or("scene", SceneKind::Bump)?;
    let mut width: usize = kv.take_or("width", 128)?;
    let mut height: usize = kv.take_or("height", 128)?;
    let texture_path: Option<String> = kv.take("texture")?;
    let texture = match &texture_path {
        Some(p) => {
            let img = load_image(base_dir.join(p))?;
            (width, height) = img.dims();
            Some(img)
        }
        None => None,
    };
    if width < 8 || height < 8 {
        return Err(Error::Config(format!("scene must be at least 8x8, got {width}x{height}")));
    }
    let seed: u64 = kv.take_or("seed", 0)?;
    let mut spec = scene_preset(kind, width, height, seed);
    if let Some(sigma) = kv.take::<f64>("texture_sigma")? {
        spec.texture = band_limited_texture(width, height, sigma, seed);
    }
    if let Some(t) = texture {
        spec.texture = t;
    }
    if let Some(p) = kv.take::<String>("elevation")? {
        spec.elevation = load_image(base_dir.join(p))?;
    }
    let scale: f32 = kv.take_or("elevation_scale", 1.0)?;
    if scale != 1.0 {
        spec.elevation = Image::from_fn(width, height, |x, y| scale * spec.elevation.get(x, y));
    }
    spec.n_frames = kv.take_or("n_frames", spec.n_frames)?;
    spec.parallax_gain = kv.take_or("parallax_gain", spec.parallax_gain)?;
    spec.affine_jitter = kv.take_or("affine_jitter", spec.affine_jitter)?;
    spec.noise_sigma = kv.take_or("noise_sigma", spec.noise_sigma)?;
    let bx: f64 = kv.take_or("baseline_x", spec.baseline.0)?;
    let by: f64 = kv.take_or("baseline_y", spec.baseline.1)?;
    let norm = bx.hypot(by);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Config("baseline must be a non-zero vector".into()));
    }
    spec.baseline = (bx / norm, by / norm);
    if let Some(m) = kv.take::<String>("movers")? {
        spec.movers = parse_movers(&m)?;
    }
    kv.finish()?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_scene_config(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let path = path.as_ref();
    let kv = KeyValues::load(path)?;
    scene_from_config(kv, path.parent().unwrap_or(Path::new(".")))
}
