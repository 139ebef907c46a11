use super::variational::{self, EngineInput, FlowSolution, FrameTerm};
use super::FlowParams;
use crate::error::Result;
use crate::image::{AffineTransform, FlowField, Image};

fn input<'a>(v0: &'a Image, vi: &'a Image, p: &'a FlowParams, init: Option<&'a FlowField>) -> EngineInput<'a> {
    EngineInput {
        reference: v0,
        reference_affine: AffineTransform::identity(),
        frames: vec![FrameTerm {
            scale: 1.0,
            image: vi,
            mask: None,
            affine: AffineTransform::identity(),
        }],
        params: p,
        init,
    }
}

/// Robust variational energy of `flow` between `v0` and `vi`, evaluated at
/// full resolution. Pixels whose target leaves `vi` keep only the
/// smoothness term.
pub fn pairwise_energy(v0: &Image, vi: &Image, flow: &FlowField, p: &FlowParams) -> Result<f64> {
    variational::full_resolution_energy(&input(v0, vi, p, None), flow)
}

/// Flow `w` such that `v0(x) ≈ vi(x + w(x))`.
pub fn estimate_pairwise_flow(v0: &Image, vi: &Image, p: &FlowParams, init: Option<&FlowField>) -> Result<FlowField> {
    Ok(estimate_pairwise_flow_traced(v0, vi, p, init)?.flow)
}

/// As [`estimate_pairwise_flow`], also returning the per-level energy traces.
pub fn estimate_pairwise_flow_traced(
    v0: &Image,
    vi: &Image,
    p: &FlowParams,
    init: Option<&FlowField>,
) -> Result<FlowSolution> {
    variational::solve(&input(v0, vi, p, init))
}
