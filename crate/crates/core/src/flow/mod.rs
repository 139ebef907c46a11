//! Robust variational optical flow: pairwise and multi-frame estimators
//! sharing one coarse-to-fine, lagged-nonlinearity, red-black SOR engine.

pub mod flo;
mod multiframe;
mod pairwise;
mod variational;

pub use flo::{read_flo, write_flo};
pub use multiframe::{estimate_multiframe_flow, estimate_multiframe_flow_traced, multiframe_energy, MultiFrameProblem};
pub use pairwise::{estimate_pairwise_flow, estimate_pairwise_flow_traced, pairwise_energy};
pub use variational::FlowSolution;

use crate::error::{Error, Result};

/// Robust penalty `sqrt(x^2 + eps^2)`.
#[inline]
pub fn robust_penalty(x: f64, epsilon: f64) -> f64 {
    (x * x + epsilon * epsilon).sqrt()
}

/// Derivative of [`robust_penalty`] with respect to `x`.
#[inline]
pub fn robust_penalty_derivative(x: f64, epsilon: f64) -> f64 {
    x / robust_penalty(x, epsilon)
}

/// Tunables of the variational energy and its solver.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    /// Smoothness weight.
    pub alpha: f64,
    /// Gradient-constancy weight.
    pub gamma: f64,
    /// Offset of the robust penalty.
    pub epsilon: f64,
    /// Pyramid downscale ratio per level.
    pub scale_factor: f64,
    /// Smallest pyramid dimension.
    pub min_size: usize,
    /// Warping (linearization) iterations per level.
    pub outer_iters: usize,
    /// Lagged-weight updates per warping iteration.
    pub inner_iters: usize,
    /// Relaxation sweeps per weight update.
    pub sor_iters: usize,
    pub sor_omega: f64,
}

/// Smoothness weight suited to super-resolution alignment.
pub const ALPHA_SR: f64 = 10.0;
/// Smoothness weight suited to surface-model extraction.
pub const ALPHA_DSM: f64 = 60.0;

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha: ALPHA_SR,
            gamma: 5.0,
            epsilon: 0.001,
            scale_factor: 0.65,
            min_size: 16,
            outer_iters: 10,
            inner_iters: 3,
            sor_iters: 30,
            sor_omega: 1.8,
        }
    }
}

impl FlowParams {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.sor_omega > 0.0 && self.sor_omega < 2.0) {
            return bad(format!("sor_omega must lie in (0, 2), got {}", self.sor_omega));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 || self.sor_iters == 0 {
            return bad("iteration counts must be at least 1".into());
        }
        crate::image::pyramid_params_ok(self.scale_factor, self.min_size)
    }
}
