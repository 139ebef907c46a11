//! Plane+parallax factorization of pairwise flows.
//!
//! Each pairwise flow `f_i` (reference to frame `i`) is modelled as
//! `f_i(x) = A_i(x) + i * d(x)`: one affine map per frame plus a single
//! disparity field scaled by the frame index. Collecting the model over a
//! subsampled pixel grid gives an overdetermined linear system that is
//! solved in normal-equation form by preconditioned conjugate gradient.
//!
//! The factorization is only defined up to an affine field `B`
//! (`d -> d + B`, `A_i -> A_i - i B` leaves every `f_i` unchanged). The
//! solution is normalized by removing the best-fit affine field from `d`
//! and folding it into the `A_i`.

mod cg;
pub mod io;
mod sparse;

pub use cg::{cg_solve, CgSolution};
pub use io::{read_affinities, write_affinities};
pub use sparse::CsrMatrix;

use std::collections::BTreeMap;

use crate::burst::{Burst, Frame};
use crate::error::{Error, Result};
use crate::image::{apply_affine, AffineField, AffineTransform, FlowField, Mask, SplineOrder};
use crate::par;

/// 2x2 Jacobian `[[j11, j12], [j21, j22]]`.
pub type Jacobian = [[f64; 2]; 2];

const IDENTITY_JACOBIAN: Jacobian = [[1.0, 0.0], [0.0, 1.0]];

#[derive(Debug, Clone)]
pub struct FactorizationProblem {
    /// Pairwise displacement fields, reference to frame `i`, keyed by `i`.
    pub flows: BTreeMap<i32, FlowField>,
    /// Pixels between retained equations along each axis.
    pub subsample_step: usize,
    /// Pin `A_0` to the identity.
    pub fix_reference: bool,
    /// Rough prior affinities whose linear parts replace the identity
    /// Jacobian in front of the disparity term. Off by default.
    pub prior_affinities: Option<BTreeMap<i32, AffineTransform>>,
}

impl FactorizationProblem {
    pub fn new(flows: BTreeMap<i32, FlowField>, subsample_step: usize) -> Self {
        FactorizationProblem {
            flows,
            subsample_step,
            fix_reference: true,
            prior_affinities: None,
        }
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if self.subsample_step == 0 {
            return Err(Error::InvalidParam("subsample_step must be at least 1".into()));
        }
        let non_ref = self.flows.keys().filter(|&&i| i != 0).count();
        if non_ref < 2 {
            return Err(Error::Contract(format!(
                "factorization needs at least 2 non-reference flows, got {non_ref}"
            )));
        }
        let dims = self.flows.values().next().unwrap().dims();
        if let Some((i, f)) = self.flows.iter().find(|(_, f)| f.dims() != dims) {
            return Err(Error::Contract(format!(
                "flow {i} has dimensions {:?}, expected {dims:?}",
                f.dims()
            )));
        }
        Ok(dims)
    }

    fn jacobian(&self, index: i32) -> Jacobian {
        match self.prior_affinities.as_ref().and_then(|m| m.get(&index)) {
            Some(a) => [[a.m11, a.m12], [a.m21, a.m22]],
            None => IDENTITY_JACOBIAN,
        }
    }
}

/// Retained-node grid of the disparity unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeGrid {
    pub step: usize,
    pub nx: usize,
    pub ny: usize,
}

impl NodeGrid {
    fn new(width: usize, height: usize, step: usize) -> Self {
        NodeGrid {
            step,
            nx: (width - 1) / step + 1,
            ny: (height - 1) / step + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Centring and scaling applied to pixel coordinates in the affine unknowns.
#[derive(Debug, Clone, Copy)]
struct Normalization {
    cx: f64,
    cy: f64,
    s: f64,
}

impl Normalization {
    fn new(width: usize, height: usize) -> Self {
        Normalization {
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            s: (width.max(height) as f64 / 2.0).max(1.0),
        }
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.s, (y - self.cy) / self.s)
    }

    /// Affine map from normalized displacement parameters
    /// `[pu_x, pu_y, pu_1, pv_x, pv_y, pv_1]`.
    fn to_affine(&self, p: &[f64]) -> AffineTransform {
        let s = self.s;
        AffineTransform {
            m11: 1.0 + p[0] / s,
            m12: p[1] / s,
            tx: p[2] - p[0] * self.cx / s - p[1] * self.cy / s,
            m21: p[3] / s,
            m22: 1.0 + p[4] / s,
            ty: p[5] - p[3] * self.cx / s - p[4] * self.cy / s,
        }
    }
}

/// Least-squares system of the factorization, in normal-equation form, plus
/// the design matrix it came from.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    /// `Jᵀ J`.
    pub normal: CsrMatrix,
    /// `Jᵀ b`.
    pub rhs: Vec<f64>,
    /// Design matrix `J`, one row per scalar equation.
    pub design: CsrMatrix,
    pub observations: Vec<f64>,
    /// Frame indices owning affine unknowns, in unknown order.
    pub frames: Vec<i32>,
    pub grid: NodeGrid,
    width: usize,
    height: usize,
    norm: Normalization,
}

impl LinearSystem {
    pub fn unknowns(&self) -> usize {
        self.design.ncols()
    }

    pub fn equations(&self) -> usize {
        self.design.nrows()
    }

    fn disparity_offset(&self) -> usize {
        6 * self.frames.len()
    }
}

/// Assembles the subsampled equations `f_i(x) = A_i(x) + i J_i d(x)` at
/// every retained node `x` and every frame `i`.
pub fn build_system(problem: &FactorizationProblem) -> Result<LinearSystem> {
    let (width, height) = problem.validate()?;
    let grid = NodeGrid::new(width, height, problem.subsample_step);
    let norm = Normalization::new(width, height);
    let frames: Vec<i32> = problem
        .flows
        .keys()
        .copied()
        .filter(|&i| !(i == 0 && problem.fix_reference))
        .collect();
    let unknowns = 6 * frames.len() + 2 * grid.len();
    let equations = 2 * grid.len() * frames.len();
    if equations < unknowns {
        return Err(Error::Underdetermined { equations, unknowns });
    }
    let offset = 6 * frames.len();

    // rows grouped by frame, then node, then component
    let per_frame: Vec<(Vec<Vec<(usize, f64)>>, Vec<f64>)> = par::map_slice(&frames, |&i| {
        let k = frames.iter().position(|&f| f == i).unwrap();
        let flow = &problem.flows[&i];
        let jac = problem.jacobian(i);
        let s = i as f64;
        let mut rows = Vec::with_capacity(2 * grid.len());
        let mut obs = Vec::with_capacity(2 * grid.len());
        for ny in 0..grid.ny {
            for nx in 0..grid.nx {
                let (x, y) = (nx * grid.step, ny * grid.step);
                let (xn, yn) = norm.apply(x as f64, y as f64);
                let node = ny * grid.nx + nx;
                let (du, dv) = (offset + 2 * node, offset + 2 * node + 1);
                let (u, v) = flow.get(x, y);
                let mut row_u = vec![(6 * k, xn), (6 * k + 1, yn), (6 * k + 2, 1.0)];
                let mut row_v = vec![(6 * k + 3, xn), (6 * k + 4, yn), (6 * k + 5, 1.0)];
                for (row, jr) in [(&mut row_u, jac[0]), (&mut row_v, jac[1])] {
                    if s * jr[0] != 0.0 {
                        row.push((du, s * jr[0]));
                    }
                    if s * jr[1] != 0.0 {
                        row.push((dv, s * jr[1]));
                    }
                }
                rows.push(row_u);
                rows.push(row_v);
                obs.push(u);
                obs.push(v);
            }
        }
        (rows, obs)
    });
    let mut rows = Vec::with_capacity(equations);
    let mut observations = Vec::with_capacity(equations);
    for (r, o) in per_frame {
        rows.extend(r);
        observations.extend(o);
    }
    let design = CsrMatrix::from_rows(unknowns, rows);
    let normal = design.normal_matrix();
    let rhs = design.transpose_mul_vec(&observations);
    Ok(LinearSystem {
        normal,
        rhs,
        design,
        observations,
        frames,
        grid,
        width,
        height,
        norm,
    })
}

#[derive(Debug, Clone)]
pub struct FactorizationResult {
    /// `A_i` per frame index, including the reference.
    pub affinities: BTreeMap<i32, AffineTransform>,
    /// Gauge-normalized disparity, pixels per unit of frame index.
    pub disparity: FlowField,
    /// RMS of the equation residuals, pixels.
    pub residual_rms: f64,
    /// Affine field removed from the raw disparity.
    pub gauge: AffineField,
    pub cg_iterations: usize,
    pub cg_relative_residual: f64,
    pub cg_converged: bool,
}

/// Bilinear interpolation of the node grid to every pixel, extended linearly
/// past the last node so affine fields are reproduced exactly.
fn upsample_nodes(values: &[f64], grid: NodeGrid, width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let axis = |p: usize, n: usize| -> (usize, f64) {
        if n == 1 {
            return (0, 0.0);
        }
        let j = (p / grid.step).min(n - 2);
        (j, (p as f64 - (j * grid.step) as f64) / grid.step as f64)
    };
    let at = |nx: usize, ny: usize, c: usize| values[2 * (ny * grid.nx + nx) + c];
    let mut u = vec![0.0; width * height];
    let mut v = vec![0.0; width * height];
    for y in 0..height {
        let (j, ty) = axis(y, grid.ny);
        let j1 = (j + 1).min(grid.ny - 1);
        for x in 0..width {
            let (i, tx) = axis(x, grid.nx);
            let i1 = (i + 1).min(grid.nx - 1);
            for (c, out) in [(0, &mut u), (1, &mut v)] {
                let top = at(i, j, c) * (1.0 - tx) + at(i1, j, c) * tx;
                let bottom = at(i, j1, c) * (1.0 - tx) + at(i1, j1, c) * tx;
                out[y * width + x] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    (u, v)
}

/// `A + k J B` for an affine field `B`.
fn fold_gauge(a: &AffineTransform, k: f64, jac: Jacobian, b: &AffineField) -> AffineTransform {
    let jb = AffineField {
        ux: jac[0][0] * b.ux + jac[0][1] * b.vx,
        uy: jac[0][0] * b.uy + jac[0][1] * b.vy,
        u0: jac[0][0] * b.u0 + jac[0][1] * b.v0,
        vx: jac[1][0] * b.ux + jac[1][1] * b.vx,
        vy: jac[1][0] * b.uy + jac[1][1] * b.vy,
        v0: jac[1][0] * b.u0 + jac[1][1] * b.v0,
    };
    a.plus_field(k, &jb)
}

/// Solves the factorization and normalizes its gauge.
pub fn solve_plane_parallax(problem: &FactorizationProblem, tol: f64, max_iters: usize) -> Result<FactorizationResult> {
    let system = build_system(problem)?;
    let sol = cg_solve(&system.normal, &system.rhs, tol, max_iters);
    if !sol.converged {
        log::warn!(
            "plane+parallax CG stopped after {} iterations at relative residual {:.3e}",
            sol.iterations,
            sol.relative_residual
        );
    }
    if sol.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            level: 0,
            iteration: sol.iterations,
            msg: "non-finite plane+parallax solution".into(),
        });
    }

    let fitted = system.design.mul_vec(&sol.x);
    let sq = par::sum_by(fitted.len(), |k| (fitted[k] - system.observations[k]).powi(2));
    let residual_rms = (sq / fitted.len() as f64).sqrt();

    let offset = system.disparity_offset();
    let (u, v) = upsample_nodes(&sol.x[offset..], system.grid, system.width, system.height);
    let raw = FlowField::from_vecs(system.width, system.height, u, v)?;
    let gauge = AffineField::fit(&raw);
    let disparity = FlowField::from_fn(system.width, system.height, |x, y| {
        let (du, dv) = raw.get(x, y);
        let (gu, gv) = gauge.eval(x as f64, y as f64);
        (du - gu, dv - gv)
    });

    let mut affinities = BTreeMap::new();
    for (k, &i) in system.frames.iter().enumerate() {
        let a = system.norm.to_affine(&sol.x[6 * k..6 * k + 6]);
        affinities.insert(i, fold_gauge(&a, i as f64, problem.jacobian(i), &gauge));
    }
    affinities.entry(0).or_insert_with(AffineTransform::identity);

    Ok(FactorizationResult {
        affinities,
        disparity,
        residual_rms,
        gauge,
        cg_iterations: sol.iterations,
        cg_relative_residual: sol.relative_residual,
        cg_converged: sol.converged,
    })
}

/// Resamples every frame onto the common plane: frame `i` becomes
/// `v_i(A_i x)` with quintic splines. Existing masks are carried along.
pub fn stabilize(frames: &Burst, affinities: &BTreeMap<i32, AffineTransform>) -> Result<Burst> {
    for f in frames.frames() {
        if !affinities.contains_key(&f.index) {
            return Err(Error::Contract(format!("no affinity for frame {}", f.index)));
        }
    }
    let out: Vec<Result<Frame>> = par::map_slice(frames.frames(), |f| {
        let a = &affinities[&f.index];
        let (image, mut mask) = apply_affine(&f.image, a, SplineOrder::Quintic)?;
        if let Some(old) = &f.mask {
            let (w, h) = f.image.dims();
            let carried = Mask::from_fn(w, h, |x, y| {
                let (sx, sy) = a.apply(x as f64, y as f64);
                let (rx, ry) = (sx.round(), sy.round());
                rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h && old.get(rx as usize, ry as usize)
            });
            mask = mask.and(&carried);
        }
        Ok(Frame {
            index: f.index,
            image,
            mask: Some(mask),
        })
    });
    Burst::new(out.into_iter().collect::<Result<Vec<_>>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(w: usize, h: usize) -> FlowField {
        FlowField::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - w as f64 * 0.45, y as f64 - h as f64 * 0.55);
            let g = (-(dx * dx + dy * dy) / (2.0 * 6.0 * 6.0)).exp();
            (0.8 * g, 0.2 * g)
        })
    }

    fn jitter(i: i32) -> AffineTransform {
        let k = i as f64;
        AffineTransform::new(1.0 + 0.002 * k, -0.001 * k, 0.0015 * k.sin(), 1.0 - 0.001 * k, 0.3 * k, -0.2 * k.cos())
    }

    fn flows_from(indices: &[i32], d: &FlowField) -> BTreeMap<i32, FlowField> {
        let (w, h) = d.dims();
        indices
            .iter()
            .map(|&i| {
                let a = jitter(i);
                let f = FlowField::from_fn(w, h, |x, y| {
                    let (ax, ay) = a.apply(x as f64, y as f64);
                    let (du, dv) = d.get(x, y);
                    (ax - x as f64 + i as f64 * du, ay - y as f64 + i as f64 * dv)
                });
                (i, f)
            })
            .collect()
    }

    #[test]
    fn unknown_and_equation_counts() {
        let flows = flows_from(&[-1, 1, 2], &FlowField::zeros(16, 16));
        let sys = build_system(&FactorizationProblem::new(flows.clone(), 4)).unwrap();
        assert_eq!(sys.unknowns(), 3 * 6 + 2 * 16);
        assert_eq!(sys.equations(), 2 * 16 * 3);
        let sys = build_system(&FactorizationProblem::new(flows, 1)).unwrap();
        assert_eq!(sys.equations(), 2 * 256 * 3);
    }

    #[test]
    fn step_four_keeps_one_sixteenth() {
        let flows = flows_from(&[1, 2], &FlowField::zeros(64, 64));
        let full = build_system(&FactorizationProblem::new(flows.clone(), 1)).unwrap().equations();
        let sub = build_system(&FactorizationProblem::new(flows, 4)).unwrap().equations();
        assert_eq!(full, 16 * sub);
    }

    #[test]
    fn underdetermined_and_invalid() {
        let flows = flows_from(&[1, 2], &FlowField::zeros(3, 3));
        assert!(matches!(
            build_system(&FactorizationProblem::new(flows, 4)),
            Err(Error::Underdetermined { equations: 4, unknowns: 14 })
        ));
        let flows = flows_from(&[1], &FlowField::zeros(16, 16));
        assert!(build_system(&FactorizationProblem::new(flows, 1)).is_err());
    }

    #[test]
    fn identity_flows() {
        let flows: BTreeMap<i32, FlowField> = [-2, -1, 1, 2].iter().map(|&i| (i, FlowField::zeros(24, 20))).collect();
        let r = solve_plane_parallax(&FactorizationProblem::new(flows, 2), 1e-12, 1000).unwrap();
        for a in r.affinities.values() {
            assert!(a.distance_to_identity() < 1e-12);
        }
        assert!(r.disparity.max_norm() < 1e-12);
    }

    #[test]
    fn exact_recovery_full_resolution() {
        let raw = bump(40, 36);
        let g = AffineField::fit(&raw);
        let d = FlowField::from_fn(40, 36, |x, y| {
            let (u, v) = raw.get(x, y);
            let (gu, gv) = g.eval(x as f64, y as f64);
            (u - gu, v - gv)
        });
        let indices = [-3, -2, -1, 1, 2, 3];
        let r = solve_plane_parallax(&FactorizationProblem::new(flows_from(&indices, &d), 1), 1e-13, 5000).unwrap();
        assert!(r.cg_converged);
        assert!(r.residual_rms < 1e-6, "rms {}", r.residual_rms);
        let err = (0..d.len())
            .map(|k| (r.disparity.u()[k] - d.u()[k]).hypot(r.disparity.v()[k] - d.v()[k]))
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "max d error {err}");
        for i in indices {
            let got = r.affinities[&i].coefficients();
            let want = jitter(i).coefficients();
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() < 1e-5, "frame {i}: {got:?} vs {want:?}");
            }
        }
        assert_eq!(r.affinities[&0], AffineTransform::identity());
    }

    #[test]
    fn upsampling_reproduces_affine_fields() {
        let grid = NodeGrid::new(17, 14, 4);
        let f = |x: f64, y: f64| (0.1 * x - 0.3 * y + 2.0, 0.05 * y + 0.02 * x);
        let mut nodes = Vec::new();
        for ny in 0..grid.ny {
            for nx in 0..grid.nx {
                let (a, b) = f((nx * 4) as f64, (ny * 4) as f64);
                nodes.push(a);
                nodes.push(b);
            }
        }
        let (u, v) = upsample_nodes(&nodes, grid, 17, 14);
        for y in 0..14 {
            for x in 0..17 {
                let (a, b) = f(x as f64, y as f64);
                assert!((u[y * 17 + x] - a).abs() < 1e-12 && (v[y * 17 + x] - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stabilize_identity_and_missing() {
        use crate::image::Image;
        let burst = Burst::from_images((-1..=1).map(|i| (i, Image::from_fn(12, 10, |x, y| (x * 3 + y) as f32 + i as f32)))).unwrap();
        let ids: BTreeMap<i32, AffineTransform> = (-1..=1).map(|i| (i, AffineTransform::identity())).collect();
        let out = stabilize(&burst, &ids).unwrap();
        for (a, b) in out.frames().iter().zip(burst.frames()) {
            for (p, q) in a.image.data().iter().zip(b.image.data()) {
                assert!((p - q).abs() < 1e-4);
            }
            assert!(a.mask.as_ref().unwrap().all());
        }
        let mut partial = ids.clone();
        partial.remove(&1);
        assert!(matches!(stabilize(&burst, &partial), Err(Error::Contract(_))));
    }
}
