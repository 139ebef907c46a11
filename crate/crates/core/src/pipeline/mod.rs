//! End-to-end processing of a burst:
//! pairwise flows, plane+parallax factorization, stabilization, multi-frame
//! flow, stack diagnostics, super-resolution and surface model.

mod config;

pub use config::{Mode, PipelineConfig};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::burst::{Burst, Frame};
use crate::error::{Error, Result};
use crate::flow::{estimate_multiframe_flow_traced, estimate_pairwise_flow_traced, read_flo, write_flo, MultiFrameProblem};
use crate::fusion::{
    align_stack, disparity_to_dsm, super_resolve, temporal_std, total_variation, total_variation_image, TemporalStd,
};
use crate::image::{load_image, save_image, AffineField, AffineTransform, FlowField};
use crate::kv::Metrics;
use crate::plane_parallax::{solve_plane_parallax, stabilize, write_affinities, FactorizationProblem};
use crate::synth::{flow_epe, frame_file_name, interior_mask, remove_affine};

/// Trailing signed integer of a file stem, e.g. `frame_-3.pfm` gives -3.
pub fn frame_index_from_path(path: &Path) -> Option<i32> {
    let stem = path.file_stem()?.to_str()?;
    let tail = stem.rsplit(['_', '-']).next()?;
    let value: i32 = tail.parse().ok()?;
    // `frame_-3`: the minus sign is the last separator
    if stem[..stem.len() - tail.len()].ends_with("_-") {
        Some(-value)
    } else {
        Some(value)
    }
}

fn is_frame_file(path: &Path) -> bool {
    let ext_ok = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pfm" | "pgm"));
    let name_ok = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with("frame_"));
    ext_ok && name_ok && frame_index_from_path(path).is_some()
}

/// Expands a directory argument into its `frame_<i>` files.
pub fn resolve_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if let [dir] = inputs {
        if dir.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| is_frame_file(p))
                .collect();
            files.sort();
            return Ok(files);
        }
    }
    Ok(inputs.to_vec())
}

/// Loads frames, re-indexing them relative to `reference`.
pub fn load_burst(inputs: &[PathBuf], reference: i32) -> Result<Burst> {
    let files = resolve_inputs(inputs)?;
    let mut frames = Vec::with_capacity(files.len());
    for p in &files {
        let index = frame_index_from_path(p)
            .ok_or_else(|| Error::Config(format!("cannot read a frame index from {}", p.display())))?;
        frames.push(Frame::new(index - reference, load_image(p)?));
    }
    if !frames.iter().any(|f| f.index == 0) {
        return Err(Error::Config(format!("no frame with index {reference} to use as reference")));
    }
    Burst::new(frames)
}

/// Every artifact of a run, also written to the output directory.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub pairwise: BTreeMap<i32, FlowField>,
    pub affinities: BTreeMap<i32, AffineTransform>,
    /// Disparity of the factorization.
    pub plane_parallax_disparity: FlowField,
    /// Final disparity (multi-frame when enabled, otherwise the factorization's).
    pub disparity: FlowField,
    /// Finest-level energy trace of each pairwise flow.
    pub pairwise_energies: BTreeMap<i32, Vec<f64>>,
    pub multiframe_energies: Vec<f64>,
    pub std_rigid: TemporalStd,
    pub std_parallax: TemporalStd,
    pub metrics: Metrics,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs every enabled stage and writes its artifacts under `config.output`.
/// A failing stage aborts the run with its name; files of earlier stages
/// stay on disk.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let out = &config.output;
    ensure_dir(out)?;
    std::fs::write(out.join("config.txt"), render_config(config)).map_err(|e| Error::io(out.join("config.txt"), e))?;
    let mut metrics = Metrics::new();

    let clock = std::time::Instant::now();
    let lap = |stage: &str| log::info!("{stage} done after {:.2?}", clock.elapsed());
    let burst = load_burst(&config.inputs, config.reference).map_err(Error::in_stage("load"))?;
    let (w, h) = burst.dims();
    metrics.push("frames", burst.len());
    metrics.push("width", w);
    metrics.push("height", h);
    metrics.push_f64("alpha", config.flow.alpha);

    // pairwise flows from the reference to every other frame
    let reference = &burst.reference()?.image;
    let pair_dir = out.join("pairwise");
    ensure_dir(&pair_dir)?;
    let mut pairwise = BTreeMap::new();
    let mut pairwise_energies = BTreeMap::new();
    for f in burst.frames().iter().filter(|f| f.index != 0) {
        let sol =
            estimate_pairwise_flow_traced(reference, &f.image, &config.flow, None).map_err(Error::in_stage("flow"))?;
        write_flo(&sol.flow, pair_dir.join(format!("flow_{}.flo", f.index)))?;
        pairwise_energies.insert(f.index, sol.finest_energies().to_vec());
        pairwise.insert(f.index, sol.flow);
    }

    lap("flow");
    let mut problem = FactorizationProblem::new(pairwise.clone(), config.subsample_step);
    problem.fix_reference = true;
    let factor = solve_plane_parallax(&problem, config.cg_tol, config.cg_max_iters).map_err(Error::in_stage("factor"))?;
    write_affinities(out.join("affinities.txt"), &factor.affinities)?;
    write_flo(&factor.disparity, out.join("disparity_pp.flo"))?;
    metrics.push_f64("pp_residual_rms", factor.residual_rms);
    metrics.push("pp_cg_iterations", factor.cg_iterations);
    metrics.push("pp_cg_converged", factor.cg_converged);
    let max_dist = factor
        .affinities
        .values()
        .map(AffineTransform::distance_to_identity)
        .fold(0.0, f64::max);
    metrics.push_f64("pp_max_affine_distance", max_dist);

    lap("factor");
    let stabilized = stabilize(&burst, &factor.affinities).map_err(Error::in_stage("stabilize"))?;
    let stab_dir = out.join("stabilized");
    ensure_dir(&stab_dir)?;
    for f in stabilized.frames() {
        save_image(&f.image, stab_dir.join(frame_file_name(f.index, "pfm")))?;
    }

    lap("stabilize");
    let (disparity, energies) = if config.multiframe {
        let mf = MultiFrameProblem::new(burst.clone(), config.flow.clone())
            .with_affinities(factor.affinities.clone())
            .with_init(factor.disparity.clone());
        let sol = estimate_multiframe_flow_traced(&mf).map_err(Error::in_stage("mfflow"))?;
        let energies = sol.finest_energies().to_vec();
        if let Some(e) = energies.last() {
            metrics.push_f64("mf_final_energy", *e);
        }
        (sol.flow, energies)
    } else {
        (factor.disparity.clone(), Vec::new())
    };
    lap("mfflow");
    write_flo(&disparity, out.join("disparity.flo"))?;
    metrics.push_f64("disparity_max_norm", disparity.max_norm());
    metrics.push_f64("disparity_mean_norm", disparity.mean_norm());
    metrics.push_f64("disparity_tv", total_variation(&disparity));

    let zero = FlowField::zeros(w, h);
    let rigid = align_stack(&burst, &factor.affinities, &zero, 1)
        .and_then(|s| temporal_std(&s))
        .map_err(Error::in_stage("fuse"))?;
    let parallax = align_stack(&burst, &factor.affinities, &disparity, 1)
        .and_then(|s| temporal_std(&s))
        .map_err(Error::in_stage("fuse"))?;
    save_image(&rigid.map, out.join("std_rigid.pfm"))?;
    save_image(&parallax.map, out.join("std_parallax.pfm"))?;
    metrics.push_f64("std_rigid", rigid.mean);
    metrics.push_f64("std_parallax", parallax.mean);
    metrics.push_f64("std_ratio", parallax.mean / rigid.mean.max(f64::MIN_POSITIVE));

    lap("fuse");
    if config.super_resolution {
        let sr = super_resolve(&burst, &factor.affinities, &disparity, config.zoom, config.splat_sigma)
            .map_err(Error::in_stage("sr"))?;
        save_image(&sr.image, out.join("sr.pfm"))?;
        save_image(&sr.image, out.join("sr.pgm"))?;
        metrics.push("sr_zoom", config.zoom);
        metrics.push("sr_fallback_pixels", sr.fallback_pixels);
    }

    lap("sr");
    if config.dsm {
        let model = disparity_to_dsm(&disparity, config.dsm_direction, config.dsm_scale).map_err(Error::in_stage("dsm"))?;
        save_image(&model.heights, out.join("dsm.pfm"))?;
        metrics.push_f64("dsm_direction_x", model.direction.0);
        metrics.push_f64("dsm_direction_y", model.direction.1);
        metrics.push_f64("dsm_tv", total_variation_image(&model.heights));
        metrics.push("dsm_degenerate", model.degenerate);
    }

    if let Some(truth_dir) = &config.truth {
        let truth = read_flo(truth_dir.join("gt_disparity.flo")).map_err(Error::in_stage("eval"))?;
        let eval = evaluate_disparity(&disparity, &truth, &pairwise, config.eval_margin).map_err(Error::in_stage("eval"))?;
        let pp = flow_epe(&factor.disparity, &truth, Some(&interior_mask(w, h, config.eval_margin)))
            .map_err(Error::in_stage("eval"))?;
        metrics.push_f64("epe_plane_parallax", pp);
        metrics.extend(eval);
    }

    std::fs::write(out.join("metrics.txt"), metrics.to_string()).map_err(|e| Error::io(out.join("metrics.txt"), e))?;
    Ok(PipelineOutput {
        pairwise,
        affinities: factor.affinities,
        plane_parallax_disparity: factor.disparity,
        disparity,
        pairwise_energies,
        multiframe_energies: energies,
        std_rigid: rigid,
        std_parallax: parallax,
        metrics,
    })
}

fn render_config(config: &PipelineConfig) -> String {
    let kv = config.to_key_values();
    let mut s = String::new();
    for key in [
        "input", "reference", "mode", "alpha", "gamma", "epsilon", "scale_factor", "min_size", "outer_iters",
        "inner_iters", "sor_iters", "sor_omega", "subsample_step", "cg_tol", "cg_max_iters", "zoom", "splat_sigma",
        "output", "multiframe", "super_resolution", "dsm", "dsm_direction", "dsm_scale", "truth", "eval_margin",
    ] {
        if let Some(v) = kv.get(key) {
            s.push_str(&format!("{key}={v}\n"));
        }
    }
    s
}

/// Pairwise flow `f_i` turned into a disparity estimate: `f_i / i` with its
/// best-fit affine field removed.
pub fn baseline_normalized(flow: &FlowField, index: i32) -> FlowField {
    let scaled = flow.scaled(1.0 / index as f64);
    remove_affine(&scaled, &AffineField::fit(&scaled))
}

/// Interior endpoint errors of a disparity estimate against the
/// gauge-normalized truth, plus the baseline-normalized error of every
/// pairwise flow and the best of them.
pub fn evaluate_disparity(
    estimate: &FlowField,
    truth: &FlowField,
    pairwise: &BTreeMap<i32, FlowField>,
    margin: usize,
) -> Result<Metrics> {
    let (w, h) = truth.dims();
    let mask = interior_mask(w, h, margin);
    let mut m = Metrics::new();
    m.push_f64("epe", flow_epe(estimate, truth, Some(&mask))?);
    let mut best: Option<f64> = None;
    for (&i, f) in pairwise {
        if i == 0 {
            continue;
        }
        let e = flow_epe(&baseline_normalized(f, i), truth, Some(&mask))?;
        m.push_f64(format!("epe_pairwise_{i}"), e);
        best = Some(best.map_or(e, |b: f64| b.min(e)));
    }
    if let Some(b) = best {
        m.push_f64("epe_pairwise_best", b);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_indices_from_names() {
        assert_eq!(frame_index_from_path(Path::new("d/frame_-3.pfm")), Some(-3));
        assert_eq!(frame_index_from_path(Path::new("frame_12.pgm")), Some(12));
        assert_eq!(frame_index_from_path(Path::new("img-4.pgm")), Some(4));
        assert_eq!(frame_index_from_path(Path::new("frame_x.pgm")), None);
        assert!(is_frame_file(Path::new("frame_0.PFM")));
        assert!(!is_frame_file(Path::new("gt_elevation.pfm")));
    }

    #[test]
    fn baseline_normalization_removes_affine_part() {
        let d = FlowField::from_fn(16, 12, |x, y| {
            let g = (-((x as f64 - 8.0).powi(2) + (y as f64 - 6.0).powi(2)) / 10.0).exp();
            (g, 0.0)
        });
        let d = remove_affine(&d, &AffineField::fit(&d));
        let f = FlowField::from_fn(16, 12, |x, y| {
            let (u, v) = d.get(x, y);
            (0.01 * x as f64 + 0.3 + 3.0 * u, -0.2 + 3.0 * v)
        });
        let back = baseline_normalized(&f, 3);
        assert!(flow_epe(&back, &d, None).unwrap() < 1e-12);
    }
}
