//! Streaming 3D perception at desk scale.
//!
//! A stateful recurrent transformer consumes a stream of images (or virtual
//! camera queries encoded as raymaps) and emits per-frame metric pointmaps,
//! confidence maps and camera poses, all expressed in the coordinate frame of
//! the first image. The crate bundles everything needed to exercise the model
//! end to end on a laptop: a reverse-mode tensor substrate, pure camera
//! geometry, a procedural scene renderer, the training objective and loop,
//! and the depth / trajectory / reconstruction evaluation protocols.
//!
//! Modules
//! - [`tensor`]: differentiable tensor graph (the closed primitive op set).
//! - [`geometry`]: cameras, poses, raymaps, pointmaps, Sim(3) alignment.
//! - [`model`]: encoders, interconnected decoders, persistent state, heads.
//! - [`losses`]: confidence-aware regression, pose and RGB losses.
//! - [`synth`]: procedural scenes, analytic renderer, sequence sampling.
//! - [`train`]: AdamW, LR schedule, staged curriculum training.
//! - [`eval`]: depth, trajectory and reconstruction metrics plus harness.
//! - [`ply`]: ASCII PLY export of accumulated point clouds.

pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod ply;
pub mod synth;
pub mod train;
pub mod tensor;
