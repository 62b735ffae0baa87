use nalgebra::Vector3;

use crate::error::{DipError, Result};
use crate::rotmath::AxisAngle;
use crate::{DEFAULT_FPS, NUM_JOINTS, POSE_DIM};

/// Offset of the translation block inside a flattened pose.
pub const TAU_OFFSET: usize = 3 * NUM_JOINTS;

/// One frame: global orientation, 21 joint rotations, root translation.
///
/// Rotation `k` (0 = global orientation of the pelvis) lives at `3k..3k+3`;
/// the translation at `66..69`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(pub [f64; POSE_DIM]);

impl Pose {
    pub fn rest() -> Self {
        Pose([0.0; POSE_DIM])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != POSE_DIM {
            return Err(DipError::Shape {
                what: "pose",
                expected: POSE_DIM,
                actual: v.len(),
            });
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(DipError::Validation(
                "pose contains non-finite values".into(),
            ));
        }
        let mut a = [0.0; POSE_DIM];
        a.copy_from_slice(v);
        Ok(Pose(a))
    }

    pub fn rotation(&self, k: usize) -> AxisAngle {
        AxisAngle::from_slice(&self.0[3 * k..3 * k + 3])
    }

    pub fn set_rotation(&mut self, k: usize, a: &AxisAngle) {
        self.0[3 * k..3 * k + 3].copy_from_slice(a.0.as_slice());
    }

    pub fn global(&self) -> AxisAngle {
        self.rotation(0)
    }

    pub fn tau(&self) -> Vector3<f64> {
        Vector3::new(
            self.0[TAU_OFFSET],
            self.0[TAU_OFFSET + 1],
            self.0[TAU_OFFSET + 2],
        )
    }

    pub fn set_tau(&mut self, t: &Vector3<f64>) {
        self.0[TAU_OFFSET..].copy_from_slice(t.as_slice());
    }
}

/// A fixed-rate pose sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub frames: Vec<Pose>,
    pub fps: f64,
}

impl MotionClip {
    pub fn new(frames: Vec<Pose>, fps: f64) -> Self {
        MotionClip { frames, fps }
    }

    pub fn with_default_fps(frames: Vec<Pose>) -> Self {
        MotionClip::new(frames, DEFAULT_FPS)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Row-major `S x 69` layout used by the diffusion sampler.
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.frames)
    }

    pub fn from_flat(x: &[f64], fps: f64) -> Result<Self> {
        Ok(MotionClip::new(unflatten(x)?, fps))
    }
}

pub fn flatten(frames: &[Pose]) -> Vec<f64> {
    let mut out = Vec::with_capacity(frames.len() * POSE_DIM);
    for p in frames {
        out.extend_from_slice(&p.0);
    }
    out
}

pub fn unflatten(x: &[f64]) -> Result<Vec<Pose>> {
    if x.len() % POSE_DIM != 0 {
        return Err(DipError::Shape {
            what: "flattened motion",
            expected: (x.len() / POSE_DIM + 1) * POSE_DIM,
            actual: x.len(),
        });
    }
    Ok(x.chunks_exact(POSE_DIM)
        .map(|c| {
            let mut a = [0.0; POSE_DIM];
            a.copy_from_slice(c);
            Pose(a)
        })
        .collect())
}
