//! Joint analysis of families of implicit shapes.
//!
//! The crate implements a full analysis pipeline over parametric implicit
//! generators `g(x, z)` (signed distance in `x`, latent code `z`):
//!
//! * [`generator`] — analytic multi-part implicit generators with exact
//!   ground-truth correspondences for verification,
//! * [`meshing`] — level-set mesh extraction, neighborhoods, surface sampling,
//! * [`aaap`] — the as-affine-as-possible deformation energy, its Schur
//!   complement, and constrained displacement solves between nearby shapes,
//! * [`variation`] — tangent-space modal analysis and the part-aware sample
//!   distance matrix,
//! * [`matching`] — dense correspondences by propagation through intermediate
//!   shapes, with distortion-based partiality weights,
//! * [`pathopt`] — interpolation-path optimization under L2 or robust energies
//!   with per-pair weights,
//! * [`coseg`] — over-segmentation and spectral consistent co-segmentation
//!   across a shape collection,
//! * [`pipeline`] — orchestration of the above plus run manifests,
//! * [`io`] — OBJ/PLY, binary matrix, and JSON interchange formats.

pub mod aaap;
pub mod config;
pub mod coseg;
pub mod error;
pub mod generator;
pub mod io;
pub mod matching;
pub mod meshing;
pub mod pathopt;
pub mod pipeline;
pub mod sparse;
pub mod variation;

pub use error::{Error, Result};
