//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the pipeline runs shared by
//! several criteria execute once. Exits non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use burst_parallax::flow::estimate_pairwise_flow;
use burst_parallax::fusion::{ncc, pearson, remove_plane, super_resolve, DEFAULT_SPLAT_SIGMA};
use burst_parallax::image::{load_image, AffineField, SplineImage};
use burst_parallax::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use burst_parallax::plane_parallax::{solve_plane_parallax, FactorizationProblem};
use burst_parallax::synth::{
    band_limited_texture, checkerboard_burst, checkerboard_value, flow_epe, generate_burst, interior_mask,
    scene_preset, write_synthetic, SceneKind, SceneSpec, SyntheticBurst,
};
use burst_parallax::{AffineTransform, FlowField, FlowParams, Image, Mask, SplineOrder};
use common::*;

const SIZE: usize = 128;
const FRAMES: usize = 9;
const SEED: u64 = 7;
const NOISE: f64 = 1.0;
const JITTER: f64 = 0.002;
const MARGIN: usize = 8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Run {
    syn: SyntheticBurst,
    out: PipelineOutput,
    dir: PathBuf,
}

impl Run {
    fn metric(&self, key: &str) -> f64 {
        self.out.metrics.get(key).unwrap_or_else(|| panic!("missing metric {key}")).parse().unwrap()
    }
}

fn scene(kind: SceneKind) -> SceneSpec {
    let mut spec = scene_preset(kind, SIZE, SIZE, SEED);
    spec.n_frames = FRAMES;
    spec.noise_sigma = NOISE;
    spec.affine_jitter = JITTER;
    spec
}

fn run_scene(root: &Path, name: &str, spec: &SceneSpec, alpha: f64, dsm_direction: Option<(f64, f64)>) -> Run {
    let syn = generate_burst(spec).expect("scene generates");
    let dir = root.join(name);
    write_synthetic(&syn, &dir).expect("scene written");
    let config = PipelineConfig {
        inputs: vec![dir.clone()],
        output: dir.join(format!("out_{alpha}")),
        truth: Some(dir.clone()),
        super_resolution: false,
        dsm: dsm_direction.is_some(),
        dsm_direction,
        flow: FlowParams::default().with_alpha(alpha),
        ..PipelineConfig::default()
    };
    let out = run_pipeline(&config).expect("pipeline runs");
    Run { syn, out, dir: config.output }
}

fn centred_bump(w: usize, h: usize) -> FlowField {
    remove_affine(&bump_disparity(w, h, 0.8))
}

fn criterion_1() -> Outcome {
    let d = centred_bump(SIZE, SIZE);
    let flows = model_flows(&symmetric_indices(4), &d, jitter, 0.0, 0);
    let start = Instant::now();
    let r = solve_plane_parallax(&FactorizationProblem::new(flows, 1), 1e-13, 20000).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let err = max_difference(&r.disparity, &d);
    outcome(
        r.residual_rms < 1e-6 && err < 1e-4 && secs < 10.0,
        format!("residual_rms={:.3e} max_d_error={err:.3e} time={secs:.2}s", r.residual_rms),
    )
}

fn criterion_2() -> Outcome {
    let d = bump_disparity(SIZE, SIZE, 0.8);
    let g = AffineField { ux: 1.5e-3, uy: -1e-3, u0: 0.4, vx: 8e-4, vy: 1.2e-3, v0: -0.3 };
    let shifted = FlowField::from_fn(SIZE, SIZE, |x, y| {
        let (u, v) = d.get(x, y);
        let (gu, gv) = g.eval(x as f64, y as f64);
        (u + gu, v + gv)
    });
    let indices = symmetric_indices(4);
    let a = solve_plane_parallax(
        &FactorizationProblem::new(model_flows(&indices, &d, jitter, 0.0, 0), 4),
        1e-12,
        20000,
    )
    .unwrap();
    let b = solve_plane_parallax(
        &FactorizationProblem::new(
            model_flows(&indices, &shifted, |i| jitter(i).plus_field(-(i as f64), &g), 0.0, 0),
            4,
        ),
        1e-12,
        20000,
    )
    .unwrap();
    let d_gap = max_difference(&a.disparity, &b.disparity);
    let a_gap = a
        .affinities
        .iter()
        .flat_map(|(i, x)| {
            let y: AffineTransform = b.affinities[i];
            x.coefficients().into_iter().zip(y.coefficients()).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max);
    outcome(d_gap < 1e-4 && a_gap < 1e-5, format!("max_d_change={d_gap:.3e} max_coefficient_change={a_gap:.3e}"))
}

fn criterion_3() -> Outcome {
    let shifts = [(2.0, 0.0), (-1.3, 2.2), (3.0, -0.4), (0.45, -2.9)];
    let v0 = band_limited_texture(SIZE, SIZE, 1.5, SEED);
    let s = SplineImage::from_image(&v0, SplineOrder::Quintic);
    let mask = interior_mask(SIZE, SIZE, MARGIN);
    let epes: Vec<f64> = shifts
        .iter()
        .map(|&(tx, ty)| {
            let v1 = Image::from_fn(SIZE, SIZE, |x, y| s.sample(x as f64 - tx, y as f64 - ty) as f32);
            let f = estimate_pairwise_flow(&v0, &v1, &FlowParams::default(), None).unwrap();
            flow_epe(&f, &FlowField::uniform(SIZE, SIZE, tx, ty), Some(&mask)).unwrap()
        })
        .collect();
    let worst = epes.iter().cloned().fold(0.0, f64::max);
    outcome(worst < 0.2, format!("worst_epe={worst:.4} epes={epes:.4?}"))
}

fn criterion_4(bump: &Run) -> Outcome {
    let mf = bump.metric("epe");
    let best = bump.metric("epe_pairwise_best");
    outcome(mf < 0.15 && mf < best, format!("multiframe_epe={mf:.4} best_pairwise_epe={best:.4}"))
}

struct OrderingRow {
    name: &'static str,
    p10: f64,
    p60: f64,
    rigid: f64,
    dmax: f64,
}

fn criterion_5(rows: &[OrderingRow]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in rows {
        let gap = (r.rigid - r.p10.max(r.p60)) / r.rigid;
        let ok = r.p10 <= r.p60 && r.p60 < r.rigid && (r.dmax <= 0.5 || gap >= 0.05);
        pass &= ok;
        parts.push(format!(
            "{}[{}] a10={:.4} a60={:.4} rigid={:.4} gap={:.1}% dmax={:.2}",
            r.name,
            if ok { "ok" } else { "x" },
            r.p10,
            r.p60,
            r.rigid,
            100.0 * gap,
            r.dmax
        ));
    }
    outcome(pass, parts.join("; "))
}

fn elevation_mask(syn: &SyntheticBurst, threshold: f32) -> Mask {
    let e = &syn.truth.elevation;
    Mask::from_fn(e.width(), e.height(), |x, y| e.get(x, y) > threshold)
}

fn criterion_6(bump: &Run) -> Outcome {
    let mut shifts: Vec<(f64, f64)> = (0..16).map(|k| ((k % 4) as f64 * 0.25, (k / 4) as f64 * 0.25)).collect();
    shifts.insert(8, (0.0, 0.0));
    shifts.remove(0);
    let (w, period) = (64, 2.5);
    let (burst, affinities) = checkerboard_burst(w, w, period, &shifts).unwrap();
    let sr = super_resolve(&burst, &affinities, &FlowField::zeros(w, w), 2, DEFAULT_SPLAT_SIGMA).unwrap();
    let truth = Image::from_fn(2 * w, 2 * w, |x, y| checkerboard_value(x as f64 / 2.0, y as f64 / 2.0, period) as f32);
    let interior = interior_mask(2 * w, 2 * w, 6);
    let fused = ncc(&sr.image, &truth, Some(&interior)).unwrap();
    let reference = SplineImage::from_image(&burst.reference().unwrap().image, SplineOrder::Quintic);
    let upsampled = Image::from_fn(2 * w, 2 * w, |x, y| reference.sample(x as f64 / 2.0, y as f64 / 2.0) as f32);
    let single = ncc(&upsampled, &truth, Some(&interior)).unwrap();

    let region = elevation_mask(&bump.syn, 0.3);
    let rigid = bump.out.std_rigid.mean_over(&region).unwrap();
    let parallax = bump.out.std_parallax.mean_over(&region).unwrap();
    let ratio = parallax / rigid;
    outcome(
        fused > 0.95 && ratio <= 0.8,
        format!("sr_ncc={fused:.4} (single_frame_ncc={single:.4}) bump_std_ratio={ratio:.3}"),
    )
}

/// Shrinks (negative `by`) or grows a rectangle, clipped to the image.
fn rect_mask(x: f64, y: f64, w: f64, h: f64, by: f64) -> Mask {
    Mask::from_fn(SIZE, SIZE, |px, py| {
        let (px, py) = (px as f64, py as f64);
        px >= x - by && px < x + w + by && py >= y - by && py < y + h + by
    })
}

fn criterion_7(root: &Path) -> Outcome {
    let spec = scene(SceneKind::Mover);
    let mover = spec.movers[0];
    let run = run_scene(root, "mover", &spec, 10.0, None);
    let d = &run.out.disparity;
    let inner = rect_mask(mover.x, mover.y, mover.width, mover.height, -3.0);
    let outer = rect_mask(mover.x, mover.y, mover.width, mover.height, 10.0);
    let near = rect_mask(mover.x, mover.y, mover.width, mover.height, 3.0);
    let ring = Mask::from_fn(SIZE, SIZE, |x, y| outer.get(x, y) && !near.get(x, y));
    let mean = |m: &Mask| {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
        for y in 0..SIZE {
            for x in 0..SIZE {
                if m.get(x, y) {
                    let (u, v) = d.get(x, y);
                    su += u;
                    sv += v;
                    n += 1.0;
                }
            }
        }
        (su / n, sv / n)
    };
    let (iu, iv) = mean(&inner);
    let (ru, rv) = mean(&ring);
    let (vx, vy) = (iu - ru, iv - rv);
    let err = (vx - mover.velocity.0).hypot(vy - mover.velocity.1);
    let object = rect_mask(mover.x, mover.y, mover.width, mover.height, 0.0);
    let rigid = run.out.std_rigid.mean_over(&object).unwrap();
    let parallax = run.out.std_parallax.mean_over(&object).unwrap();
    let drop = 1.0 - parallax / rigid;
    outcome(
        err < 0.2 && drop >= 0.3,
        format!(
            "velocity=({vx:.3},{vy:.3}) truth=({:.2},{:.2}) error={err:.3} ghost_std rigid={rigid:.3} parallax={parallax:.3} drop={:.1}%",
            mover.velocity.0,
            mover.velocity.1,
            100.0 * drop
        ),
    )
}

fn criterion_8(root: &Path, bump60: &Run) -> Outcome {
    let heights = load_image(bump60.dir.join("dsm.pfm")).unwrap();
    let interior = interior_mask(SIZE, SIZE, MARGIN);
    let flat_h = remove_plane(&heights, Some(&interior)).unwrap();
    let flat_e = remove_plane(&bump60.syn.truth.elevation, Some(&interior)).unwrap();
    let select = |img: &Image| -> Vec<f64> {
        (0..SIZE * SIZE).filter(|&k| interior.data()[k]).map(|k| img.data()[k] as f64).collect()
    };
    let r = pearson(&select(&flat_h), &select(&flat_e)).unwrap();

    let mut doubled = scene(SceneKind::Bump);
    doubled.elevation = Image::from_fn(SIZE, SIZE, |x, y| 2.0 * doubled.elevation.get(x, y));
    let run2 = run_scene(root, "bump_doubled", &doubled, 60.0, Some((1.0, 0.0)));
    let heights2 = load_image(run2.dir.join("dsm.pfm")).unwrap();
    // least-squares slope of the doubled heights against the originals
    let (a, b) = (select(&heights), select(&heights2));
    let slope = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.iter().map(|x| x * x).sum::<f64>();
    outcome(
        r > 0.9 && (slope - 2.0).abs() <= 0.1,
        format!("pearson={r:.4} doubling_slope={slope:.4}"),
    )
}

fn criterion_9(runs: &[&Run]) -> Outcome {
    let mut traces = 0;
    let mut worst = 0.0f64;
    for run in runs {
        let all = run.out.pairwise_energies.values().chain(std::iter::once(&run.out.multiframe_energies));
        for trace in all {
            traces += 1;
            for pair in trace.windows(2) {
                worst = worst.max((pair[1] - pair[0]) / pair[0]);
            }
        }
    }
    outcome(
        worst <= 1e-3,
        format!("traces={traces} largest_relative_increase={worst:.3e}"),
    )
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "config.txt") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_10(root: &Path) -> Outcome {
    let mut spec = scene_preset(SceneKind::Bump, 64, 64, SEED);
    spec.n_frames = 5;
    spec.noise_sigma = NOISE;
    spec.affine_jitter = JITTER;
    let syn = generate_burst(&spec).unwrap();
    let dir = root.join("determinism");
    write_synthetic(&syn, &dir).unwrap();
    let run = |name: &str, threads: usize| {
        let config = PipelineConfig {
            inputs: vec![dir.clone()],
            output: dir.join(name),
            truth: Some(dir.clone()),
            ..PipelineConfig::default()
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_pipeline(&config)).unwrap();
        files_under(&config.output)
    };
    let first = run("a", 8);
    let again = run("b", 8);
    let single = run("c", 1);
    let rerun = first == again;
    let threads = first == single;
    outcome(
        rerun && threads && !first.is_empty(),
        format!("files={} rerun_identical={rerun} threads_1_vs_8_identical={threads}", first.len()),
    )
}

fn main() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!("criterion {id:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    report(1, "factorization exactness", criterion_1());
    report(2, "gauge invariance", criterion_2());
    report(3, "pairwise flow sanity", criterion_3());

    let bump10 = run_scene(root, "bump", &scene(SceneKind::Bump), 10.0, None);
    let bump60 = run_scene(root, "bump", &scene(SceneKind::Bump), 60.0, Some((1.0, 0.0)));
    report(4, "multi-frame benefit", criterion_4(&bump10));

    let ramp10 = run_scene(root, "ramp", &scene(SceneKind::Ramp), 10.0, None);
    let ramp60 = run_scene(root, "ramp", &scene(SceneKind::Ramp), 60.0, None);
    let urban10 = run_scene(root, "urban", &scene(SceneKind::Urban), 10.0, None);
    let urban60 = run_scene(root, "urban", &scene(SceneKind::Urban), 60.0, None);
    let row = |name, a: &Run, b: &Run| OrderingRow {
        name,
        p10: a.metric("std_parallax"),
        p60: b.metric("std_parallax"),
        rigid: a.metric("std_rigid"),
        dmax: a.syn.truth.disparity.max_norm(),
    };
    let rows = [row("bump", &bump10, &bump60), row("ramp", &ramp10, &ramp60), row("urban", &urban10, &urban60)];
    report(5, "temporal std ordering", criterion_5(&rows));
    report(6, "super-resolution benefit", criterion_6(&bump10));
    report(7, "moving object", criterion_7(root));
    report(8, "surface model proportionality", criterion_8(root, &bump60));
    report(9, "energy descent", criterion_9(&[&bump10, &bump60, &ramp10, &ramp60, &urban10, &urban60]));
    report(10, "determinism", criterion_10(root));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.1}s{}",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!(", failing: {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
