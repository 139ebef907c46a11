//! Parallax estimation for push-frame image bursts.
//!
//! The pipeline factorizes pairwise optical flows into one affine transform
//! per frame plus a shared disparity field whose magnitude grows linearly
//! with the frame index, then refines that disparity with a variational flow
//! that uses all frames jointly. The result drives parallax-aware stack
//! alignment, shift-and-add super-resolution and a coarse surface model.

pub mod burst;
pub mod error;
pub mod flow;
pub mod fusion;
pub mod image;
pub mod kv;
pub mod par;
pub mod pipeline;
pub mod plane_parallax;
pub mod synth;

pub use burst::{Burst, Frame};
pub use error::{Error, Result};
pub use image::{AffineField, AffineTransform, FlowField, Image, Mask, SplineOrder};
pub use flow::FlowParams;
