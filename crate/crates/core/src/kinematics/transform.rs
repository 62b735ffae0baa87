use nalgebra::Vector3;

use super::fk::forward;
use super::pose::{MotionClip, Pose};
use super::skeleton::{Skeleton, LEFT_HIP, PELVIS, RIGHT_HIP};
use crate::error::{DipError, Result};
use crate::rotmath::{aa_to_mat, log_unchecked, RotMat};

/// Minimum horizontal hip separation accepted by [`canonicalize`].
pub const MIN_HIP_SPAN: f64 = 1e-6;

/// Rigid map `p -> rot * p + trans`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rot: RotMat,
    pub trans: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rot: RotMat::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rot: RotMat::identity(),
            trans: t,
        }
    }

    /// Rotation about the vertical axis followed by a translation.
    pub fn yaw(angle: f64, t: Vector3<f64>) -> Self {
        RigidTransform {
            rot: RotMat::about_z(angle),
            trans: t,
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.0 * p + self.trans
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rot.0 * v
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rot.transpose();
        RigidTransform {
            rot: rt,
            trans: -(rt.0 * self.trans),
        }
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rot: self.rot.mul(&other.rot),
            trans: self.rot.0 * other.trans + self.trans,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rot == RotMat::identity() && self.trans == Vector3::zeros()
    }
}

/// Applies `t` to one pose so its joints move rigidly.
pub fn transform_pose(t: &RigidTransform, pose: &Pose, skel: &Skeleton) -> Pose {
    let mut out = *pose;
    let root = skel.offset(PELVIS);
    let pelvis = pose.tau() + root;
    out.set_tau(&(t.apply_point(&pelvis) - root));
    if t.rot != RotMat::identity() {
        let g = t.rot.0 * aa_to_mat(&pose.global()).0;
        out.set_rotation(0, &log_unchecked(&g));
    }
    out
}

pub fn apply_transform(t: &RigidTransform, motion: &MotionClip, skel: &Skeleton) -> MotionClip {
    MotionClip::new(
        motion
            .frames
            .iter()
            .map(|p| transform_pose(t, p, skel))
            .collect(),
        motion.fps,
    )
}

/// Horizontal rotation and translation placing the first-frame pelvis at the
/// origin with the left-to-right hip direction along +x (so the body faces +y).
pub fn canonical_transform(first: &Pose, skel: &Skeleton) -> Result<RigidTransform> {
    let fk = forward(&first.0, skel);
    let d = fk.joints[RIGHT_HIP] - fk.joints[LEFT_HIP];
    let n = Vector3::new(d.x, d.y, 0.0);
    let len = n.norm();
    if len < MIN_HIP_SPAN || !len.is_finite() {
        return Err(DipError::DegenerateHips(len));
    }
    let x = n / len;
    let z = Vector3::z();
    let y = z.cross(&x);
    // rows are the local axes, i.e. the inverse of [x y z]
    let r = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let rot = RotMat(r);
    Ok(RigidTransform {
        rot,
        trans: -(r * fk.joints[PELVIS]),
    })
}

/// Moves a motion into its first-frame local coordinates. Returns the
/// canonical motion and the transform that produced it.
pub fn canonicalize(motion: &MotionClip, skel: &Skeleton) -> Result<(MotionClip, RigidTransform)> {
    let first = motion
        .frames
        .first()
        .ok_or_else(|| DipError::Validation("cannot canonicalize an empty motion".into()))?;
    let t = canonical_transform(first, skel)?;
    Ok((apply_transform(&t, motion, skel), t))
}
