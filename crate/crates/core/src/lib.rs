//! Reward-guided diffusion sampling for scene-aware motion synthesis.
//!
//! A motion is a fixed-length sequence of 69-dimensional poses (global
//! orientation, 21 joint rotations, root translation). Each denoising step
//! predicts a clean motion, then nudges the mean of the reverse transition
//! along the gradient of interaction rewards evaluated on the denoiser's own
//! prediction. Sub-task motions are stitched into long sequences by blending
//! rotations in matrix power space.

pub mod cli;
pub mod diffusion;
pub mod dip;
pub mod error;
pub mod kinematics;
pub mod metrics;
pub mod planner;
pub mod prior;
pub mod rewards;
pub mod rotmath;
pub mod scene;

pub use error::{DipError, Result};

/// Number of reals in one flattened pose.
pub const POSE_DIM: usize = 69;
/// Joints in the simplified skeleton.
pub const NUM_JOINTS: usize = 22;
/// Default clip length in frames.
pub const DEFAULT_FRAMES: usize = 160;
/// Default frame rate.
pub const DEFAULT_FPS: f64 = 40.0;
/// Maximum number of history frames carried into the next sub-task.
pub const H_MAX: usize = 10;
