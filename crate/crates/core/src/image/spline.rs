//! B-spline interpolation of orders 1, 3 and 5 with mirror boundaries.
//!
//! Orders 3 and 5 use recursive prefiltering to turn samples into spline
//! coefficients, so the interpolant passes through the original samples.

use super::{Image, Plane};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplineOrder {
    Linear,
    Cubic,
    Quintic,
}

impl SplineOrder {
    pub fn degree(self) -> usize {
        match self {
            SplineOrder::Linear => 1,
            SplineOrder::Cubic => 3,
            SplineOrder::Quintic => 5,
        }
    }

    fn poles(self) -> &'static [f64] {
        match self {
            SplineOrder::Linear => &[],
            SplineOrder::Cubic => &[-0.267_949_192_431_122_7],
            SplineOrder::Quintic => &[-0.430_575_347_099_973_8, -0.043_096_288_203_264_65],
        }
    }
}

impl TryFrom<u32> for SplineOrder {
    type Error = Error;

    fn try_from(order: u32) -> Result<Self> {
        match order {
            1 => Ok(SplineOrder::Linear),
            3 => Ok(SplineOrder::Cubic),
            5 => Ok(SplineOrder::Quintic),
            other => Err(Error::InvalidParam(format!(
                "spline order must be 1, 3 or 5, got {other}"
            ))),
        }
    }
}

/// Prefiltered spline coefficients ready for sampling at real positions.
#[derive(Debug, Clone)]
pub struct SplineImage {
    width: usize,
    height: usize,
    order: SplineOrder,
    coeffs: Vec<f64>,
}

impl SplineImage {
    pub fn from_image(img: &Image, order: SplineOrder) -> Self {
        Self::from_plane(&img.to_plane(), order)
    }

    pub(crate) fn from_plane(plane: &Plane, order: SplineOrder) -> Self {
        Self::from_samples(plane.width, plane.height, plane.data.clone(), order)
    }

    pub(crate) fn from_samples(width: usize, height: usize, mut coeffs: Vec<f64>, order: SplineOrder) -> Self {
        let poles = order.poles();
        if !poles.is_empty() {
            par::for_each_row(&mut coeffs, width, |_, row| prefilter_line(row, poles));
            // columns: transpose, filter rows, transpose back
            let mut t = transpose(&coeffs, width, height);
            par::for_each_row(&mut t, height, |_, col| prefilter_line(col, poles));
            coeffs = transpose(&t, height, width);
        }
        SplineImage {
            width,
            height,
            order,
            coeffs,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn order(&self) -> SplineOrder {
        self.order
    }

    /// True when `(x, y)` lies inside the sampled domain `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        const TOL: f64 = 1e-9;
        x >= -TOL && y >= -TOL && x <= (self.width - 1) as f64 + TOL && y <= (self.height - 1) as f64 + TOL
    }

    /// Interpolated value at `(x, y)`; positions outside the domain are
    /// evaluated on the mirrored extension.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let mut xi = [0usize; 6];
        let mut xw = [0.0f64; 6];
        let mut yi = [0usize; 6];
        let mut yw = [0.0f64; 6];
        let n = taps(self.order, x, self.width, &mut xi, &mut xw);
        taps(self.order, y, self.height, &mut yi, &mut yw);
        let mut acc = 0.0;
        for j in 0..n {
            let row = &self.coeffs[yi[j] * self.width..(yi[j] + 1) * self.width];
            let mut r = 0.0;
            for i in 0..n {
                r += xw[i] * row[xi[i]];
            }
            acc += yw[j] * r;
        }
        acc
    }
}

fn transpose(data: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = data[y * width + x];
        }
    }
    out
}

#[inline]
fn mirror(k: isize, n: usize) -> usize {
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
}

/// Fills tap indices and weights for one axis, returns the tap count.
#[inline]
fn taps(order: SplineOrder, x: f64, n: usize, idx: &mut [usize; 6], w: &mut [f64; 6]) -> usize {
    let fl = x.floor();
    let t = x - fl;
    let base = fl as isize;
    match order {
        SplineOrder::Linear => {
            idx[0] = mirror(base, n);
            idx[1] = mirror(base + 1, n);
            w[0] = 1.0 - t;
            w[1] = t;
            2
        }
        SplineOrder::Cubic => {
            let s = 1.0 - t;
            w[0] = s * s * s / 6.0;
            w[1] = 2.0 / 3.0 - t * t + 0.5 * t * t * t;
            w[2] = 2.0 / 3.0 - s * s + 0.5 * s * s * s;
            w[3] = t * t * t / 6.0;
            for (k, slot) in idx.iter_mut().take(4).enumerate() {
                *slot = mirror(base - 1 + k as isize, n);
            }
            4
        }
        SplineOrder::Quintic => {
            for k in 0..6 {
                let node = base - 2 + k as isize;
                idx[k] = mirror(node, n);
                w[k] = bspline5(x - node as f64);
            }
            6
        }
    }
}

/// Centred quintic B-spline.
#[inline]
pub(crate) fn bspline5(x: f64) -> f64 {
    let a = x.abs();
    if a >= 3.0 {
        return 0.0;
    }
    let p5 = |t: f64| if t > 0.0 { t * t * t * t * t } else { 0.0 };
    (p5(3.0 - a) - 6.0 * p5(2.0 - a) + 15.0 * p5(1.0 - a)) / 120.0
}

fn prefilter_line(c: &mut [f64], poles: &[f64]) {
    let n = c.len();
    if n == 1 {
        return;
    }
    let gain: f64 = poles.iter().map(|z| (1.0 - z) * (1.0 - 1.0 / z)).product();
    c.iter_mut().for_each(|v| *v *= gain);
    for &z in poles {
        c[0] = initial_causal(c, z);
        for k in 1..n {
            c[k] += z * c[k - 1];
        }
        c[n - 1] = initial_anticausal(c, z);
        for k in (0..n - 1).rev() {
            c[k] = z * (c[k + 1] - c[k]);
        }
    }
}

fn initial_causal(c: &[f64], z: f64) -> f64 {
    const TOL: f64 = 1e-16;
    let n = c.len();
    let horizon = (TOL.ln() / z.abs().ln()).ceil() as usize;
    if horizon < n {
        let mut zn = z;
        let mut sum = c[0];
        for &ck in &c[1..horizon] {
            sum += zn * ck;
            zn *= z;
        }
        sum
    } else {
        let iz = 1.0 / z;
        let mut zn = z;
        let mut z2n = z.powi(n as i32 - 1);
        let mut sum = c[0] + z2n * c[n - 1];
        z2n = z2n * z2n * iz;
        for &ck in &c[1..n - 1] {
            sum += (zn + z2n) * ck;
            zn *= z;
            z2n *= iz;
        }
        sum / (1.0 - zn * zn)
    }
}

fn initial_anticausal(c: &[f64], z: f64) -> f64 {
    let n = c.len();
    (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1])
}
