#![allow(dead_code)]

use std::collections::BTreeMap;

use burst_parallax::{AffineTransform, FlowField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Smooth off-centre bump, mostly along x.
pub fn bump_disparity(w: usize, h: usize, amplitude: f64) -> FlowField {
    let s = w.min(h) as f64 / 6.0;
    FlowField::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - w as f64 * 0.45, y as f64 - h as f64 * 0.55);
        let g = amplitude * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
        (g, 0.25 * g)
    })
}

pub fn jitter(i: i32) -> AffineTransform {
    let k = i as f64;
    AffineTransform::new(
        1.0 + 0.002 * k,
        -0.001 * k,
        0.0015 * k.sin(),
        1.0 - 0.001 * k,
        0.3 * k,
        -0.2 * k.cos(),
    )
}

/// `f_i(x) = A_i x - x + i d(x)`, plus optional white noise of std `sigma`.
pub fn model_flows(
    indices: &[i32],
    d: &FlowField,
    affinity: impl Fn(i32) -> AffineTransform,
    sigma: f64,
    seed: u64,
) -> BTreeMap<i32, FlowField> {
    let (w, h) = d.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    indices
        .iter()
        .map(|&i| {
            let a = affinity(i);
            let mut f = FlowField::from_fn(w, h, |x, y| {
                let (ax, ay) = a.apply(x as f64, y as f64);
                let (du, dv) = d.get(x, y);
                (ax - x as f64 + i as f64 * du, ay - y as f64 + i as f64 * dv)
            });
            if sigma > 0.0 {
                let (u, v) = f.components_mut();
                for c in u.iter_mut().chain(v.iter_mut()) {
                    *c += normal.sample(&mut rng);
                }
            }
            (i, f)
        })
        .collect()
}

pub fn symmetric_indices(per_side: i32) -> Vec<i32> {
    (-per_side..=per_side).filter(|&i| i != 0).collect()
}

pub fn max_difference(a: &FlowField, b: &FlowField) -> f64 {
    a.u()
        .iter()
        .zip(a.v())
        .zip(b.u().iter().zip(b.v()))
        .map(|((au, av), (bu, bv))| (au - bu).hypot(av - bv))
        .fold(0.0, f64::max)
}

pub fn rms_difference(a: &FlowField, b: &FlowField) -> f64 {
    let sq: f64 = a
        .u()
        .iter()
        .zip(a.v())
        .zip(b.u().iter().zip(b.v()))
        .map(|((au, av), (bu, bv))| (au - bu).powi(2) + (av - bv).powi(2))
        .sum();
    (sq / a.len() as f64).sqrt()
}

/// `d` minus its least-squares affine field, computed independently of the
/// library by solving the 3x3 normal equations per component.
pub fn remove_affine(d: &FlowField) -> FlowField {
    let (w, h) = d.dims();
    let mut m = [[0.0f64; 3]; 3];
    let mut bu = [0.0f64; 3];
    let mut bv = [0.0f64; 3];
    for y in 0..h {
        for x in 0..w {
            let p = [x as f64, y as f64, 1.0];
            let (u, v) = d.get(x, y);
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] += p[r] * p[c];
                }
                bu[r] += p[r] * u;
                bv[r] += p[r] * v;
            }
        }
    }
    let cu = solve3(m, bu);
    let cv = solve3(m, bv);
    FlowField::from_fn(w, h, |x, y| {
        let (u, v) = d.get(x, y);
        let (xf, yf) = (x as f64, y as f64);
        (u - (cu[0] * xf + cu[1] * yf + cu[2]), v - (cv[0] * xf + cv[1] * yf + cv[2]))
    })
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = m[r][col] / m[col][col];
            for c in col..3 {
                m[r][c] -= f * m[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| m[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    x
}
