use super::{blur_plane, resize_plane, Image, Plane};
use crate::error::{Error, Result};

/// Coarse-to-fine image pyramid, finest level first.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<Image>,
    pub scale_factor: f64,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

pub(crate) fn check_pyramid_params(scale_factor: f64, min_size: usize) -> Result<()> {
    if !(0.5..=0.95).contains(&scale_factor) {
        return Err(Error::InvalidParam(format!(
            "pyramid scale factor must lie in [0.5, 0.95], got {scale_factor}"
        )));
    }
    if min_size < 16 {
        return Err(Error::InvalidParam(format!(
            "pyramid min_size must be at least 16, got {min_size}"
        )));
    }
    Ok(())
}

/// Gaussian pyramid: presmooth with `sigma = 0.6 sqrt(1/s^2 - 1)`, then
/// bilinear downsampling to `ceil(dim * s)` until the next level would drop
/// below `min_size`.
pub fn build_pyramid(img: &Image, scale_factor: f64, min_size: usize) -> Result<Pyramid> {
    check_pyramid_params(scale_factor, min_size)?;
    let levels = plane_pyramid(&img.to_plane(), scale_factor, min_size)
        .iter()
        .map(Image::from_plane)
        .collect();
    Ok(Pyramid {
        levels,
        scale_factor,
    })
}

pub(crate) fn plane_pyramid(img: &Plane, scale_factor: f64, min_size: usize) -> Vec<Plane> {
    let sigma = 0.6 * (1.0 / (scale_factor * scale_factor) - 1.0).sqrt();
    let mut levels = vec![img.clone()];
    loop {
        let last = levels.last().unwrap();
        let nw = (last.width as f64 * scale_factor).ceil() as usize;
        let nh = (last.height as f64 * scale_factor).ceil() as usize;
        if nw.min(nh) < min_size || (nw == last.width && nh == last.height) {
            break;
        }
        let next = resize_plane(&blur_plane(last, sigma), nw, nh);
        levels.push(next);
    }
    levels
}
