use crate::error::{Error, Result};
use crate::image::{FlowField, Image};
use crate::par;

/// Relative (or scaled) heights from disparity projected on one direction.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    pub heights: Image,
    /// Unit projection direction.
    pub direction: (f64, f64),
    pub scale: Option<f64>,
    /// Set when the disparity carried no usable direction and the model is flat.
    pub degenerate: bool,
}

/// Principal axis of the disparity vectors, `None` when they have no spread.
fn principal_direction(d: &FlowField) -> Option<(f64, f64)> {
    let n = d.len() as f64;
    let (u, v) = (d.u(), d.v());
    let mu = par::sum(u) / n;
    let mv = par::sum(v) / n;
    let suu = par::sum_by(d.len(), |k| (u[k] - mu).powi(2)) / n;
    let svv = par::sum_by(d.len(), |k| (v[k] - mv).powi(2)) / n;
    let suv = par::sum_by(d.len(), |k| (u[k] - mu) * (v[k] - mv)) / n;
    if !(suu + svv > 1e-24) {
        return None;
    }
    let theta = 0.5 * (2.0 * suv).atan2(suu - svv);
    Some((theta.cos(), theta.sin()))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `heights(x) = scale * <d(x), direction>`.
///
/// Without a direction the principal axis of the `d` vectors is used and
/// its sign is chosen so that the median height is non-negative; a supplied
/// direction is only normalized. An all-zero `d` gives a flat, degenerate
/// model.
pub fn disparity_to_dsm(d: &FlowField, direction: Option<(f64, f64)>, scale: Option<f64>) -> Result<SurfaceModel> {
    if !d.is_finite() {
        return Err(Error::Contract("disparity has non-finite values".into()));
    }
    if let Some(s) = scale {
        if !s.is_finite() {
            return Err(Error::InvalidParam(format!("scale must be finite, got {s}")));
        }
    }
    let (w, h) = d.dims();
    let flat = |direction| SurfaceModel {
        heights: Image::new(w, h),
        direction,
        scale,
        degenerate: true,
    };
    let project = |(dx, dy): (f64, f64)| -> Vec<f64> {
        let s = scale.unwrap_or(1.0);
        d.u().iter().zip(d.v()).map(|(u, v)| s * (u * dx + v * dy)).collect()
    };
    let (dir, heights) = match direction {
        Some((x, y)) => {
            let n = x.hypot(y);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::InvalidParam("DSM direction must be a non-zero vector".into()));
            }
            let dir = (x / n, y / n);
            (dir, project(dir))
        }
        None => {
            if d.max_norm() == 0.0 {
                log::warn!("disparity is identically zero; surface model is flat");
                return Ok(flat((1.0, 0.0)));
            }
            let Some(mut dir) = principal_direction(d) else {
                log::warn!("disparity has no spread; surface model is flat");
                return Ok(flat((1.0, 0.0)));
            };
            let mut heights = project(dir);
            if median(&mut heights.clone()) < 0.0 {
                dir = (-dir.0, -dir.1);
                heights.iter_mut().for_each(|v| *v = -*v);
            }
            (dir, heights)
        }
    };
    let degenerate = d.max_norm() == 0.0;
    Ok(SurfaceModel {
        heights: Image::from_vec(w, h, heights.into_iter().map(|v| v as f32).collect())?,
        direction: dir,
        scale,
        degenerate,
    })
}
