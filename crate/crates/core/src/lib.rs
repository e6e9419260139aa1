//! Video-consistent geometry estimation, desk scale.
//!
//! Procedurally rendered multi-view RGB-D sequences feed a small diffusion
//! transformer that predicts per-pixel geometry (global coordinates, surface
//! normals, radius) for every frame jointly, with geometry tokens conditioned
//! on the video by sharing the positional encoding of their RGB partners.

pub mod dataio;
pub mod diffusion;
pub mod eval;
pub mod export;
pub mod geometry;
pub mod model;
pub mod numerics;
pub mod scenegen;
pub mod train;
