use super::{AffineTransform, FlowField, Image, Mask, SplineImage, SplineOrder};
use crate::error::{Error, Result};
use crate::par;

/// `output(x) = img(x + flow(x))`. Samples whose source falls outside the
/// image are masked out and set to zero.
pub fn warp(img: &Image, flow: &FlowField, order: SplineOrder) -> Result<(Image, Mask)> {
    if img.dims() != flow.dims() {
        return Err(Error::Contract(format!(
            "flow {:?} does not match image {:?}",
            flow.dims(),
            img.dims()
        )));
    }
    let spline = SplineImage::from_image(img, order);
    Ok(resample(&spline, img.width(), img.height(), |x, y| {
        let (u, v) = flow.get(x, y);
        (x as f64 + u, y as f64 + v)
    }))
}

/// `output(x) = img(A(x))`.
pub fn apply_affine(img: &Image, a: &AffineTransform, order: SplineOrder) -> Result<(Image, Mask)> {
    a.validate()?;
    let spline = SplineImage::from_image(img, order);
    Ok(resample(&spline, img.width(), img.height(), |x, y| {
        a.apply(x as f64, y as f64)
    }))
}

/// Samples `spline` at `map(x, y)` over a `width x height` output grid.
pub(crate) fn resample<F>(spline: &SplineImage, width: usize, height: usize, map: F) -> (Image, Mask)
where
    F: Fn(usize, usize) -> (f64, f64) + Sync + Send,
{
    let mut out: Vec<(f32, bool)> = vec![(0.0, false); width * height];
    par::for_each_row(&mut out, width, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let (sx, sy) = map(x, y);
            *o = if spline.contains(sx, sy) {
                (spline.sample(sx, sy) as f32, true)
            } else {
                (0.0, false)
            };
        }
    });
    let (data, valid): (Vec<f32>, Vec<bool>) = out.into_iter().unzip();
    (
        Image::from_vec(width, height, data).expect("dimensions checked"),
        Mask::from_vec(width, height, valid).expect("dimensions checked"),
    )
}
