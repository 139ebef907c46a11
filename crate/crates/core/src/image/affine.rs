use super::FlowField;
use crate::error::{Error, Result};
use crate::par;

/// Planar affine map `x -> M x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub const fn new(m11: f64, m12: f64, m21: f64, m22: f64, tx: f64, ty: f64) -> Self {
        AffineTransform {
            m11,
            m12,
            m21,
            m22,
            tx,
            ty,
        }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0, tx, ty)
    }

    pub fn coefficients(&self) -> [f64; 6] {
        [self.m11, self.m12, self.m21, self.m22, self.tx, self.ty]
    }

    pub fn from_coefficients(c: [f64; 6]) -> Self {
        Self::new(c[0], c[1], c[2], c[3], c[4], c[5])
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m11 * x + self.m12 * y + self.tx,
            self.m21 * x + self.m22 * y + self.ty,
        )
    }

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    /// Checks orientation preservation.
    pub fn validate(&self) -> Result<()> {
        if !self.coefficients().iter().all(|c| c.is_finite()) {
            return Err(Error::Contract("affine transform has non-finite coefficients".into()));
        }
        if self.det() <= 0.0 {
            return Err(Error::Contract(format!(
                "affine transform is not orientation-preserving (det = {})",
                self.det()
            )));
        }
        Ok(())
    }

    /// `max(|M - I|, |t|)` over entries.
    pub fn distance_to_identity(&self) -> f64 {
        [
            (self.m11 - 1.0).abs(),
            self.m12.abs(),
            self.m21.abs(),
            (self.m22 - 1.0).abs(),
            self.tx.abs(),
            self.ty.abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// `self ∘ other`, i.e. `x -> self(other(x))`.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        AffineTransform {
            m11: self.m11 * other.m11 + self.m12 * other.m21,
            m12: self.m11 * other.m12 + self.m12 * other.m22,
            m21: self.m21 * other.m11 + self.m22 * other.m21,
            m22: self.m21 * other.m12 + self.m22 * other.m22,
            tx: self.m11 * other.tx + self.m12 * other.ty + self.tx,
            ty: self.m21 * other.tx + self.m22 * other.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Option<AffineTransform> {
        let det = self.det();
        if det.abs() < 1e-300 {
            return None;
        }
        let m11 = self.m22 / det;
        let m12 = -self.m12 / det;
        let m21 = -self.m21 / det;
        let m22 = self.m11 / det;
        Some(AffineTransform {
            m11,
            m12,
            m21,
            m22,
            tx: -(m11 * self.tx + m12 * self.ty),
            ty: -(m21 * self.tx + m22 * self.ty),
        })
    }

    /// Displacement part `A(x) - x` as an affine field.
    pub fn displacement(&self) -> AffineField {
        AffineField {
            ux: self.m11 - 1.0,
            uy: self.m12,
            u0: self.tx,
            vx: self.m21,
            vy: self.m22 - 1.0,
            v0: self.ty,
        }
    }

    /// `x -> A(x) + k * B(x)`.
    pub fn plus_field(&self, k: f64, field: &AffineField) -> AffineTransform {
        AffineTransform {
            m11: self.m11 + k * field.ux,
            m12: self.m12 + k * field.uy,
            m21: self.m21 + k * field.vx,
            m22: self.m22 + k * field.vy,
            tx: self.tx + k * field.u0,
            ty: self.ty + k * field.v0,
        }
    }

    /// Same map expressed on a resampled grid whose pixel centres relate by
    /// `x_coarse = s (x_fine + 0.5) - 0.5` per axis.
    pub(crate) fn rescaled(&self, sx: f64, sy: f64) -> AffineTransform {
        // x_f = D^-1 (x_c + 0.5) - 0.5 ; A_c(x_c) = D (A(x_f) + 0.5) - 0.5
        let m11 = self.m11;
        let m12 = self.m12 * sx / sy;
        let m21 = self.m21 * sy / sx;
        let m22 = self.m22;
        let (ox, oy) = self.apply(0.5 / sx - 0.5, 0.5 / sy - 0.5);
        // A_c(0) = D (A(D^-1 0.5 - 0.5) + 0.5) - 0.5
        let tx = sx * (ox + 0.5) - 0.5;
        let ty = sy * (oy + 0.5) - 0.5;
        AffineTransform {
            m11,
            m12,
            m21,
            m22,
            tx,
            ty,
        }
    }
}

/// Affine displacement field `(ux x + uy y + u0, vx x + vy y + v0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineField {
    pub ux: f64,
    pub uy: f64,
    pub u0: f64,
    pub vx: f64,
    pub vy: f64,
    pub v0: f64,
}

impl AffineField {
    pub fn zero() -> Self {
        Self::default()
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.ux * x + self.uy * y + self.u0,
            self.vx * x + self.vy * y + self.v0,
        )
    }

    pub fn coefficients(&self) -> [f64; 6] {
        [self.ux, self.uy, self.u0, self.vx, self.vy, self.v0]
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.coefficients().iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn scaled(&self, k: f64) -> AffineField {
        AffineField {
            ux: self.ux * k,
            uy: self.uy * k,
            u0: self.u0 * k,
            vx: self.vx * k,
            vy: self.vy * k,
            v0: self.v0 * k,
        }
    }

    pub fn to_flow(&self, width: usize, height: usize) -> FlowField {
        FlowField::from_fn(width, height, |x, y| self.eval(x as f64, y as f64))
    }

    /// Least-squares affine fit to a flow field over all pixels.
    ///
    /// Works in centred, scaled coordinates so the normal equations stay
    /// well conditioned for large images.
    pub fn fit(flow: &FlowField) -> AffineField {
        let (w, h) = flow.dims();
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let s = (w.max(h) as f64 / 2.0).max(1.0);
        let n = w * h;
        let coord = |i: usize| (((i % w) as f64 - cx) / s, ((i / w) as f64 - cy) / s);

        // Design rows are [x, y, 1]; accumulate XtX and Xt[u v].
        let mut xtx = [[0.0; 3]; 3];
        let basis = |i: usize, k: usize| {
            let (x, y) = coord(i);
            [x, y, 1.0][k]
        };
        for (r, row) in xtx.iter_mut().enumerate() {
            for (c, entry) in row.iter_mut().enumerate() {
                *entry = par::sum_by(n, |i| basis(i, r) * basis(i, c));
            }
        }
        let mut bu = [0.0; 3];
        let mut bv = [0.0; 3];
        for r in 0..3 {
            bu[r] = par::sum_by(n, |i| basis(i, r) * flow.u()[i]);
            bv[r] = par::sum_by(n, |i| basis(i, r) * flow.v()[i]);
        }
        let pu = solve3(xtx, bu);
        let pv = solve3(xtx, bv);
        // back to pixel coordinates
        AffineField {
            ux: pu[0] / s,
            uy: pu[1] / s,
            u0: pu[2] - pu[0] * cx / s - pu[1] * cy / s,
            vx: pv[0] / s,
            vy: pv[1] / s,
            v0: pv[2] - pv[0] * cx / s - pv[1] * cy / s,
        }
    }
}

/// Gaussian elimination with partial pivoting; singular directions are zeroed.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        if a[col][col].abs() < 1e-14 * scale {
            continue;
        }
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        if a[row][row].abs() < 1e-14 * scale {
            continue;
        }
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}
