//! Coarse-to-fine minimizer shared by the pairwise and multi-frame flows.
//!
//! The energy for a displacement field `d` is
//!
//! ```text
//! E(d) = sum_x (1/n_x) sum_{i valid at x} [ Psi(v_i(A_i x + k_i d) - v_0(A_0 x))
//!                                          + gamma Psi(|grad v_i(..) - grad v_0(..)|) ]
//!      + alpha sum_x Psi(|grad d(x)|)
//! ```
//!
//! where `k_i` is the frame index (the baseline multiplier) and `n_x` the
//! number of frames whose warped sample at `x` stays inside the image.
//! A pairwise flow is the special case of one frame with `k = 1`.
//!
//! Each warping iteration linearizes the constancy terms around the current
//! field, the lagged robust weights are refreshed `inner_iters` times and the
//! resulting 2x2-block system is relaxed with red-black SOR. The update is
//! accepted with step halving only if it does not increase the energy.

use super::{robust_penalty, FlowParams};
use crate::error::{Error, Result};
use crate::image::{gradients_plane, plane_pyramid, resize_plane, AffineTransform, FlowField, Image, Mask, Plane, SplineImage, SplineOrder};
use crate::par;

/// One non-reference frame entering the data term.
pub(crate) struct FrameTerm<'a> {
    /// Baseline multiplier applied to the displacement.
    pub scale: f64,
    pub image: &'a Image,
    pub mask: Option<&'a Mask>,
    pub affine: AffineTransform,
}

pub(crate) struct EngineInput<'a> {
    pub reference: &'a Image,
    pub reference_affine: AffineTransform,
    pub frames: Vec<FrameTerm<'a>>,
    pub params: &'a FlowParams,
    pub init: Option<&'a FlowField>,
}

/// Estimated field plus the energy after each accepted warping iteration,
/// one trace per pyramid level ordered coarsest first.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub flow: FlowField,
    pub level_energies: Vec<Vec<f64>>,
}

impl FlowSolution {
    /// Energy trace at full resolution.
    pub fn finest_energies(&self) -> &[f64] {
        self.level_energies.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Interpolants of one frame at one pyramid level.
struct LevelFrame {
    scale: f64,
    affine: AffineTransform,
    img: SplineImage,
    gx: SplineImage,
    gy: SplineImage,
    gxx: SplineImage,
    gxy: SplineImage,
    gyy: SplineImage,
    mask: Option<Plane>,
}

/// Reference values sampled at `A_0 x`.
struct LevelRef {
    value: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    valid: Vec<bool>,
}

struct Level {
    width: usize,
    height: usize,
    reference: LevelRef,
    frames: Vec<LevelFrame>,
}

/// Warped quantities of one frame at the current field.
/// Layout: `[Iz, Ix, Iy, Ixz, Iyz, Ixx, Ixy, Iyy]`, `None` when masked.
type Lin = Option<[f64; 8]>;

const SOLVER_ORDER: SplineOrder = SplineOrder::Cubic;

pub(crate) fn check_dims(input: &EngineInput) -> Result<()> {
    let dims = input.reference.dims();
    for f in &input.frames {
        if f.image.dims() != dims {
            return Err(Error::Contract(format!(
                "frame dimensions {:?} differ from reference {:?}",
                f.image.dims(),
                dims
            )));
        }
        if let Some(m) = f.mask {
            if (m.width(), m.height()) != dims {
                return Err(Error::Contract("frame mask dimensions differ from reference".into()));
            }
        }
    }
    if let Some(init) = input.init {
        if init.dims() != dims {
            return Err(Error::Contract(format!(
                "initial flow {:?} does not match images {:?}",
                init.dims(),
                dims
            )));
        }
    }
    Ok(())
}

fn mask_plane(mask: &Mask) -> Plane {
    Plane::from_vec(
        mask.width(),
        mask.height(),
        mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )
}

fn build_levels(input: &EngineInput) -> Vec<Level> {
    let p = input.params;
    let ref_pyr = plane_pyramid(&input.reference.to_plane(), p.scale_factor, p.min_size);
    let frame_pyrs: Vec<Vec<Plane>> = input
        .frames
        .iter()
        .map(|f| plane_pyramid(&f.image.to_plane(), p.scale_factor, p.min_size))
        .collect();
    let mask_pyrs: Vec<Option<Vec<Plane>>> = input
        .frames
        .iter()
        .map(|f| f.mask.map(|m| plane_pyramid(&mask_plane(m), p.scale_factor, p.min_size)))
        .collect();
    let (w0, h0) = input.reference.dims();

    (0..ref_pyr.len())
        .map(|l| {
            let r = &ref_pyr[l];
            let (w, h) = (r.width, r.height);
            let sx = w as f64 / w0 as f64;
            let sy = h as f64 / h0 as f64;
            let ref_affine = input.reference_affine.rescaled(sx, sy);
            let reference = sample_reference(r, &ref_affine);
            let frames = input
                .frames
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    let plane = &frame_pyrs[k][l];
                    let (gx, gy) = gradients_plane(plane);
                    let (gxx, gxy) = gradients_plane(&gx);
                    let (_, gyy) = gradients_plane(&gy);
                    LevelFrame {
                        scale: f.scale,
                        affine: f.affine.rescaled(sx, sy),
                        img: SplineImage::from_plane(plane, SOLVER_ORDER),
                        gx: SplineImage::from_plane(&gx, SOLVER_ORDER),
                        gy: SplineImage::from_plane(&gy, SOLVER_ORDER),
                        gxx: SplineImage::from_plane(&gxx, SOLVER_ORDER),
                        gxy: SplineImage::from_plane(&gxy, SOLVER_ORDER),
                        gyy: SplineImage::from_plane(&gyy, SOLVER_ORDER),
                        mask: mask_pyrs[k].as_ref().map(|m| m[l].clone()),
                    }
                })
                .collect();
            Level {
                width: w,
                height: h,
                reference,
                frames,
            }
        })
        .collect()
}

fn sample_reference(plane: &Plane, affine: &AffineTransform) -> LevelRef {
    let (w, h) = (plane.width, plane.height);
    let (gx, gy) = gradients_plane(plane);
    if *affine == AffineTransform::identity() {
        return LevelRef {
            value: plane.data.clone(),
            gx: gx.data,
            gy: gy.data,
            valid: vec![true; w * h],
        };
    }
    let s = SplineImage::from_plane(plane, SOLVER_ORDER);
    let sgx = SplineImage::from_plane(&gx, SOLVER_ORDER);
    let sgy = SplineImage::from_plane(&gy, SOLVER_ORDER);
    let samples = par::map_range(w * h, |i| {
        let (x, y) = affine.apply((i % w) as f64, (i / w) as f64);
        if s.contains(x, y) {
            (s.sample(x, y), sgx.sample(x, y), sgy.sample(x, y), true)
        } else {
            (0.0, 0.0, 0.0, false)
        }
    });
    LevelRef {
        value: samples.iter().map(|s| s.0).collect(),
        gx: samples.iter().map(|s| s.1).collect(),
        gy: samples.iter().map(|s| s.2).collect(),
        valid: samples.iter().map(|s| s.3).collect(),
    }
}

/// Warps every frame at the field `(u, v)` and forms the constancy residuals.
fn linearize(level: &Level, u: &[f64], v: &[f64]) -> Vec<Vec<Lin>> {
    let w = level.width;
    let r = &level.reference;
    level
        .frames
        .iter()
        .map(|f| {
            let mut out: Vec<Lin> = vec![None; w * level.height];
            par::for_each_row(&mut out, w, |y, row| {
                for (x, o) in row.iter_mut().enumerate() {
                    let i = y * w + x;
                    if !r.valid[i] {
                        continue;
                    }
                    let (ax, ay) = f.affine.apply(x as f64, y as f64);
                    let px = ax + f.scale * u[i];
                    let py = ay + f.scale * v[i];
                    if !f.img.contains(px, py) {
                        continue;
                    }
                    if let Some(m) = &f.mask {
                        let mx = px.round() as usize;
                        let my = py.round() as usize;
                        if m.at(mx.min(m.width - 1), my.min(m.height - 1)) < 0.999 {
                            continue;
                        }
                    }
                    let ix = f.gx.sample(px, py);
                    let iy = f.gy.sample(px, py);
                    *o = Some([
                        f.img.sample(px, py) - r.value[i],
                        ix,
                        iy,
                        ix - r.gx[i],
                        iy - r.gy[i],
                        f.gxx.sample(px, py),
                        f.gxy.sample(px, py),
                        f.gyy.sample(px, py),
                    ]);
                }
            });
            out
        })
        .collect()
}

/// Forward-difference gradient magnitude squared of the field at pixel `i`.
#[inline]
fn grad_sq(u: &[f64], v: &[f64], w: usize, h: usize, i: usize) -> f64 {
    let (x, y) = (i % w, i / w);
    let (mut ux, mut vx, mut uy, mut vy) = (0.0, 0.0, 0.0, 0.0);
    if x + 1 < w {
        ux = u[i + 1] - u[i];
        vx = v[i + 1] - v[i];
    }
    if y + 1 < h {
        uy = u[i + w] - u[i];
        vy = v[i + w] - v[i];
    }
    ux * ux + uy * uy + vx * vx + vy * vy
}

fn valid_counts(lins: &[Vec<Lin>], n: usize) -> Vec<u32> {
    (0..n)
        .map(|i| lins.iter().filter(|l| l[i].is_some()).count() as u32)
        .collect()
}

fn energy(level: &Level, lins: &[Vec<Lin>], u: &[f64], v: &[f64], p: &FlowParams) -> f64 {
    let (w, h) = (level.width, level.height);
    let eps = p.epsilon;
    par::sum_by(w * h, |i| {
        let mut data = 0.0;
        let mut n = 0u32;
        for l in lins {
            if let Some(c) = &l[i] {
                data += robust_penalty(c[0], eps) + p.gamma * robust_penalty(c[3].hypot(c[4]), eps);
                n += 1;
            }
        }
        let data = if n > 0 { data / n as f64 } else { 0.0 };
        data + p.alpha * robust_penalty(grad_sq(u, v, w, h, i).sqrt(), eps)
    })
}

/// Per-pixel symmetric 2x2 data block `[a11, a12, a22]` and right-hand side.
#[derive(Clone, Copy, Default)]
struct Block {
    a11: f64,
    a12: f64,
    a22: f64,
    b1: f64,
    b2: f64,
}

fn data_blocks(
    level: &Level,
    lins: &[Vec<Lin>],
    counts: &[u32],
    du: &[[f64; 2]],
    p: &FlowParams,
) -> Vec<Block> {
    let n = level.width * level.height;
    let eps = p.epsilon;
    par::map_range(n, |i| {
        let mut b = Block::default();
        if counts[i] == 0 {
            return b;
        }
        let inv_n = 1.0 / counts[i] as f64;
        let [du_i, dv_i] = du[i];
        for (f, l) in level.frames.iter().zip(lins) {
            let Some(c) = &l[i] else { continue };
            let k = f.scale;
            let (jx, jy) = (k * c[1], k * c[2]);
            let (hxx, hxy, hyy) = (k * c[5], k * c[6], k * c[7]);

            let r0 = c[0] + jx * du_i + jy * dv_i;
            let wd = inv_n / robust_penalty(r0, eps);
            b.a11 += wd * jx * jx;
            b.a12 += wd * jx * jy;
            b.a22 += wd * jy * jy;
            b.b1 -= wd * c[0] * jx;
            b.b2 -= wd * c[0] * jy;

            if p.gamma > 0.0 {
                let gx = c[3] + hxx * du_i + hxy * dv_i;
                let gy = c[4] + hxy * du_i + hyy * dv_i;
                let wg = p.gamma * inv_n / robust_penalty(gx.hypot(gy), eps);
                b.a11 += wg * (hxx * hxx + hxy * hxy);
                b.a12 += wg * (hxx * hxy + hxy * hyy);
                b.a22 += wg * (hxy * hxy + hyy * hyy);
                b.b1 -= wg * (c[3] * hxx + c[4] * hxy);
                b.b2 -= wg * (c[3] * hxy + c[4] * hyy);
            }
        }
        b
    })
}

/// Solves for the increment of one warping iteration.
fn solve_increment(level: &Level, lins: &[Vec<Lin>], u: &[f64], v: &[f64], p: &FlowParams) -> Vec<[f64; 2]> {
    let (w, h) = (level.width, level.height);
    let n = w * h;
    let counts = valid_counts(lins, n);
    let mut delta = vec![[0.0f64; 2]; n];
    let mut scratch = vec![[0.0f64; 2]; n];

    for _ in 0..p.inner_iters {
        let blocks = data_blocks(level, lins, &counts, &delta, p);
        let uu: Vec<f64> = (0..n).map(|i| u[i] + delta[i][0]).collect();
        let vv: Vec<f64> = (0..n).map(|i| v[i] + delta[i][1]).collect();
        let phi: Vec<f64> = par::map_range(n, |i| p.alpha / robust_penalty(grad_sq(&uu, &vv, w, h, i).sqrt(), p.epsilon));

        for _ in 0..p.sor_iters {
            for color in 0..2 {
                let d = &delta;
                par::for_each_row(&mut scratch, w, |y, row| {
                    for (x, out) in row.iter_mut().enumerate() {
                        let i = y * w + x;
                        if (x + y) % 2 != color {
                            *out = d[i];
                            continue;
                        }
                        let b = &blocks[i];
                        let (mut s, mut r1, mut r2) = (0.0, b.b1, b.b2);
                        let mut edge = |j: usize, weight: f64| {
                            s += weight;
                            r1 += weight * (u[j] + d[j][0] - u[i]);
                            r2 += weight * (v[j] + d[j][1] - v[i]);
                        };
                        if x + 1 < w {
                            edge(i + 1, phi[i]);
                        }
                        if x > 0 {
                            edge(i - 1, phi[i - 1]);
                        }
                        if y + 1 < h {
                            edge(i + w, phi[i]);
                        }
                        if y > 0 {
                            edge(i - w, phi[i - w]);
                        }
                        let m11 = b.a11 + s;
                        let m22 = b.a22 + s;
                        let det = m11 * m22 - b.a12 * b.a12;
                        let nu = (m22 * r1 - b.a12 * r2) / det;
                        let nv = (m11 * r2 - b.a12 * r1) / det;
                        let om = p.sor_omega;
                        *out = [(1.0 - om) * d[i][0] + om * nu, (1.0 - om) * d[i][1] + om * nv];
                    }
                });
                std::mem::swap(&mut delta, &mut scratch);
            }
        }
    }
    delta
}

/// Bring a full-resolution field to level dimensions.
fn field_at(flow: &FlowField, w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    if flow.dims() == (w, h) {
        return (flow.u().to_vec(), flow.v().to_vec());
    }
    let r = flow.resized(w, h);
    (r.u().to_vec(), r.v().to_vec())
}

fn upsample(u: &[f64], v: &[f64], from: (usize, usize), to: (usize, usize)) -> (Vec<f64>, Vec<f64>) {
    let sx = to.0 as f64 / from.0 as f64;
    let sy = to.1 as f64 / from.1 as f64;
    let ru = resize_plane(&Plane::from_vec(from.0, from.1, u.to_vec()), to.0, to.1);
    let rv = resize_plane(&Plane::from_vec(from.0, from.1, v.to_vec()), to.0, to.1);
    (
        ru.data.into_iter().map(|c| c * sx).collect(),
        rv.data.into_iter().map(|c| c * sy).collect(),
    )
}

const MAX_HALVINGS: usize = 4;
/// Largest accepted update (pixels) below which a level is considered converged.
const MIN_UPDATE: f64 = 1e-4;

pub(crate) fn solve(input: &EngineInput) -> Result<FlowSolution> {
    input.params.validate()?;
    check_dims(input)?;
    let p = input.params;
    let levels = build_levels(input);
    let n_levels = levels.len();

    let coarsest = &levels[n_levels - 1];
    let (mut u, mut v) = match input.init {
        Some(init) => field_at(init, coarsest.width, coarsest.height),
        None => {
            let n = coarsest.width * coarsest.height;
            (vec![0.0; n], vec![0.0; n])
        }
    };
    let mut dims = (coarsest.width, coarsest.height);
    let mut traces = Vec::with_capacity(n_levels);

    for (l, level) in levels.iter().enumerate().rev() {
        if dims != (level.width, level.height) {
            (u, v) = upsample(&u, &v, dims, (level.width, level.height));
            dims = (level.width, level.height);
        }
        let n = level.width * level.height;
        let mut lins = linearize(level, &u, &v);
        let mut current = energy(level, &lins, &u, &v, p);
        if !current.is_finite() {
            return Err(Error::Divergence {
                level: l,
                iteration: 0,
                msg: "non-finite energy at level start".into(),
            });
        }
        let mut trace = vec![current];

        for outer in 0..p.outer_iters {
            let delta = solve_increment(level, &lins, &u, &v, p);
            if delta.iter().any(|d| !d[0].is_finite() || !d[1].is_finite()) {
                return Err(Error::Divergence {
                    level: l,
                    iteration: outer,
                    msg: "non-finite flow increment".into(),
                });
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let cu: Vec<f64> = (0..n).map(|i| u[i] + step * delta[i][0]).collect();
                let cv: Vec<f64> = (0..n).map(|i| v[i] + step * delta[i][1]).collect();
                let cl = linearize(level, &cu, &cv);
                let e = energy(level, &cl, &cu, &cv, p);
                if e.is_finite() && e <= current {
                    accepted = Some((cu, cv, cl, e));
                    break;
                }
                step *= 0.5;
            }
            let Some((cu, cv, cl, e)) = accepted else { break };
            let largest = delta
                .iter()
                .map(|d| step * d[0].hypot(d[1]))
                .fold(0.0, f64::max);
            u = cu;
            v = cv;
            lins = cl;
            current = e;
            trace.push(current);
            if largest < MIN_UPDATE {
                break;
            }
        }
        log::debug!(
            "level {l} ({}x{}): energy {:.6e} -> {:.6e} in {} updates",
            level.width,
            level.height,
            trace[0],
            current,
            trace.len() - 1
        );
        traces.push(trace);
    }

    let (w, h) = input.reference.dims();
    let flow = FlowField::from_vecs(w, h, u, v)?;
    if !flow.is_finite() {
        return Err(Error::Divergence {
            level: 0,
            iteration: p.outer_iters,
            msg: "non-finite output flow".into(),
        });
    }
    Ok(FlowSolution {
        flow,
        level_energies: traces,
    })
}

/// Energy of `flow` at full resolution, no pyramid.
pub(crate) fn full_resolution_energy(input: &EngineInput, flow: &FlowField) -> Result<f64> {
    check_dims(input)?;
    if flow.dims() != input.reference.dims() {
        return Err(Error::Contract(format!(
            "flow {:?} does not match images {:?}",
            flow.dims(),
            input.reference.dims()
        )));
    }
    let single = FlowParams {
        // only the finest level is built
        min_size: usize::MAX,
        ..input.params.clone()
    };
    let p = input.params;
    let levels = build_levels(&EngineInput {
        reference: input.reference,
        reference_affine: input.reference_affine,
        frames: input
            .frames
            .iter()
            .map(|f| FrameTerm {
                scale: f.scale,
                image: f.image,
                mask: f.mask,
                affine: f.affine,
            })
            .collect(),
        params: &single,
        init: None,
    });
    let level = &levels[0];
    let lins = linearize(level, flow.u(), flow.v());
    Ok(energy(level, &lins, flow.u(), flow.v(), p))
}
