use std::collections::BTreeMap;

use super::variational::{self, EngineInput, FlowSolution, FrameTerm};
use super::FlowParams;
use crate::burst::Burst;
use crate::error::{Error, Result};
use crate::image::{AffineTransform, FlowField};

/// Joint estimation of one displacement field from a whole burst under the
/// constant-motion model: frame `i` is displaced by `i * d` relative to the
/// reference once its affinity `A_i` is applied.
#[derive(Debug, Clone)]
pub struct MultiFrameProblem {
    pub frames: Burst,
    /// Per-frame affinities; missing entries are the identity (pre-stabilized frames).
    pub affinities: BTreeMap<i32, AffineTransform>,
    pub params: FlowParams,
    pub init: Option<FlowField>,
}

impl MultiFrameProblem {
    pub fn new(frames: Burst, params: FlowParams) -> Self {
        MultiFrameProblem {
            frames,
            affinities: BTreeMap::new(),
            params,
            init: None,
        }
    }

    pub fn with_affinities(mut self, affinities: BTreeMap<i32, AffineTransform>) -> Self {
        self.affinities = affinities;
        self
    }

    pub fn with_init(mut self, init: FlowField) -> Self {
        self.init = Some(init);
        self
    }

    fn affinity(&self, index: i32) -> AffineTransform {
        self.affinities.get(&index).copied().unwrap_or_default()
    }

    fn engine_input(&self) -> Result<EngineInput<'_>> {
        let reference = self.frames.reference()?;
        if self.frames.len() < 2 {
            return Err(Error::Contract("multi-frame flow needs at least one frame besides the reference".into()));
        }
        for a in self.affinities.values() {
            a.validate()?;
        }
        let frames = self
            .frames
            .frames()
            .iter()
            .filter(|f| f.index != 0)
            .map(|f| FrameTerm {
                scale: f.index as f64,
                image: &f.image,
                mask: f.mask.as_ref(),
                affine: self.affinity(f.index),
            })
            .collect();
        Ok(EngineInput {
            reference: &reference.image,
            reference_affine: self.affinity(0),
            frames,
            params: &self.params,
            init: self.init.as_ref(),
        })
    }
}

/// Energy of `d` at full resolution: constancy terms averaged over the
/// frames valid at each pixel, plus one smoothness term.
pub fn multiframe_energy(problem: &MultiFrameProblem, d: &FlowField) -> Result<f64> {
    variational::full_resolution_energy(&problem.engine_input()?, d)
}

pub fn estimate_multiframe_flow(problem: &MultiFrameProblem) -> Result<FlowField> {
    Ok(estimate_multiframe_flow_traced(problem)?.flow)
}

pub fn estimate_multiframe_flow_traced(problem: &MultiFrameProblem) -> Result<FlowSolution> {
    variational::solve(&problem.engine_input()?)
}
