use super::{bilinear_taps, Image, Plane};
use crate::error::{Error, Result};
use crate::par;

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    Image::from_plane(&blur_plane(&img.to_plane(), sigma))
}

pub(crate) fn blur_plane(src: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return src.clone();
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (w, h) = (src.width, src.height);
    let reflect = |k: isize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n as isize - 1);
        let m = k.rem_euclid(period);
        if m >= n as isize {
            (period - m) as usize
        } else {
            m as usize
        }
    };

    let mut tmp = vec![0.0; w * h];
    par::for_each_row(&mut tmp, w, |y, row| {
        let line = &src.data[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * line[reflect(x as isize + j as isize - radius, w)];
            }
            *out = acc;
        }
    });
    let mut out = vec![0.0; w * h];
    par::for_each_row(&mut out, w, |y, row| {
        for (j, k) in kernel.iter().enumerate() {
            let sy = reflect(y as isize + j as isize - radius, h);
            let line = &tmp[sy * w..(sy + 1) * w];
            for (o, s) in row.iter_mut().zip(line) {
                *o += k * s;
            }
        }
    });
    Plane::from_vec(w, h, out)
}

/// Central differences in the interior, one-sided at the borders.
/// Returns `(d/dx, d/dy)`.
pub fn gradients(img: &Image) -> Result<(Image, Image)> {
    if img.width() < 3 || img.height() < 3 {
        return Err(Error::Contract(format!(
            "gradients need at least 3x3 pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let (gx, gy) = gradients_plane(&img.to_plane());
    Ok((Image::from_plane(&gx), Image::from_plane(&gy)))
}

pub(crate) fn gradients_plane(src: &Plane) -> (Plane, Plane) {
    let (w, h) = (src.width, src.height);
    let d = &src.data;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    par::for_each_row(&mut gx, w, |y, row| {
        let line = &d[y * w..(y + 1) * w];
        if w == 1 {
            row[0] = 0.0;
            return;
        }
        row[0] = line[1] - line[0];
        row[w - 1] = line[w - 1] - line[w - 2];
        for x in 1..w - 1 {
            row[x] = 0.5 * (line[x + 1] - line[x - 1]);
        }
    });
    par::for_each_row(&mut gy, w, |y, row| {
        if h == 1 {
            row.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let (a, b, k) = if y == 0 {
            (1, 0, 1.0)
        } else if y == h - 1 {
            (h - 1, h - 2, 1.0)
        } else {
            (y + 1, y - 1, 0.5)
        };
        for (x, out) in row.iter_mut().enumerate() {
            *out = k * (d[a * w + x] - d[b * w + x]);
        }
    });
    (Plane::from_vec(w, h, gx), Plane::from_vec(w, h, gy))
}

/// Bilinear resampling with the pixel-centre convention
/// `x_src = (x_dst + 0.5) * w_src / w_dst - 0.5`.
pub(crate) fn resize_plane(src: &Plane, width: usize, height: usize) -> Plane {
    let rx = src.width as f64 / width as f64;
    let ry = src.height as f64 / height as f64;
    let mut out = vec![0.0; width * height];
    par::for_each_row(&mut out, width, |y, row| {
        let sy = (y as f64 + 0.5) * ry - 0.5;
        for (x, o) in row.iter_mut().enumerate() {
            let sx = (x as f64 + 0.5) * rx - 0.5;
            let (i00, i10, i01, i11, fx, fy) = bilinear_taps(src.width, src.height, sx, sy);
            let d = &src.data;
            *o = (d[i00] * (1.0 - fx) + d[i10] * fx) * (1.0 - fy) + (d[i01] * (1.0 - fx) + d[i11] * fx) * fy;
        }
    });
    Plane::from_vec(width, height, out)
}
