use crate::error::{Error, Result};
use crate::image::{FlowField, Image, Mask};
use crate::par;

/// Pearson correlation of two equally long sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::EmptyMetric("correlation needs at least two samples".into()));
    }
    let n = a.len() as f64;
    let ma = par::sum(a) / n;
    let mb = par::sum(b) / n;
    let cov = par::sum_by(a.len(), |k| (a[k] - ma) * (b[k] - mb));
    let va = par::sum_by(a.len(), |k| (a[k] - ma).powi(2));
    let vb = par::sum_by(b.len(), |k| (b[k] - mb).powi(2));
    if va == 0.0 || vb == 0.0 {
        return Err(Error::EmptyMetric("correlation of a constant sequence".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

fn selected(img: &Image, mask: Option<&Mask>) -> Vec<f64> {
    img.data()
        .iter()
        .enumerate()
        .filter(|(k, _)| mask.is_none_or(|m| m.data()[*k]))
        .map(|(_, &v)| v as f64)
        .collect()
}

/// Normalized cross-correlation of two images over the pixels in `mask`.
pub fn ncc(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    if a.dims() != b.dims() || mask.is_some_and(|m| (m.width(), m.height()) != a.dims()) {
        return Err(Error::Contract("image dimensions differ".into()));
    }
    pearson(&selected(a, mask), &selected(b, mask))
}

/// Subtracts the least-squares plane `c0 + c1 x + c2 y` fitted over `mask`.
pub fn remove_plane(img: &Image, mask: Option<&Mask>) -> Result<Image> {
    let (w, h) = img.dims();
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    for y in 0..h {
        for x in 0..w {
            if mask.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let row = [1.0, x as f64 - cx, y as f64 - cy];
            let v = img.get(x, y) as f64;
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[i] += row[i] * v;
            }
        }
    }
    let c = solve3(ata, atb).ok_or_else(|| Error::EmptyMetric("plane fit is singular".into()))?;
    Ok(Image::from_fn(w, h, |x, y| {
        (img.get(x, y) as f64 - c[0] - c[1] * (x as f64 - cx) - c[2] * (y as f64 - cy)) as f32
    }))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Mean over pixels of `sqrt(|grad u|^2 + |grad v|^2)` with forward
/// differences (zero across the last row and column).
pub fn total_variation(d: &FlowField) -> f64 {
    let (w, h) = d.dims();
    let (u, v) = (d.u(), d.v());
    let tv = par::sum_by(w * h, |k| {
        let (x, y) = (k % w, k / w);
        let (mut s, mut t) = (0.0, 0.0);
        if x + 1 < w {
            s += (u[k + 1] - u[k]).powi(2) + (v[k + 1] - v[k]).powi(2);
        }
        if y + 1 < h {
            t += (u[k + w] - u[k]).powi(2) + (v[k + w] - v[k]).powi(2);
        }
        (s + t).sqrt()
    });
    tv / (w * h) as f64
}

/// Total variation of a scalar image, same convention as [`total_variation`].
pub fn total_variation_image(img: &Image) -> f64 {
    let (w, h) = img.dims();
    let data: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    total_variation(&FlowField::from_vecs(w, h, data, vec![0.0; w * h]).expect("dimensions match"))
}
