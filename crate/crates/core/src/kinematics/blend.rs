//! Transition blending between consecutive sub-task motions.

use super::pose::Pose;
use crate::error::{DipError, Result};
use crate::rotmath::{aa_to_mat, blend_rot, log_unchecked};
use crate::{H_MAX, NUM_JOINTS};

/// Blends one pose: rotations in matrix power space, translation linearly.
/// `gamma = 0` returns `old`, `gamma = 1` returns `new`, both exactly.
pub fn blend_pose(old: &Pose, new: &Pose, gamma: f64) -> Pose {
    if gamma == 0.0 {
        return *old;
    }
    if gamma == 1.0 {
        return *new;
    }
    let mut out = *old;
    for k in 0..NUM_JOINTS {
        let a = aa_to_mat(&old.rotation(k));
        let b = aa_to_mat(&new.rotation(k));
        out.set_rotation(k, &log_unchecked(&blend_rot(&a, &b, gamma).0));
    }
    out.set_tau(&(old.tau() * (1.0 - gamma) + new.tau() * gamma));
    out
}

/// Blend weights `s / (H + 1)` for `s = 1..=H`.
pub fn blend_weights(h: usize) -> Vec<f64> {
    (1..=h).map(|s| s as f64 / (h + 1) as f64).collect()
}

/// Time-varying blend over the overlap window: frame `s` leans
/// `s / (H + 1)` toward the new motion.
pub fn blend_overlap(hist_tail: &[Pose], new_head: &[Pose]) -> Result<Vec<Pose>> {
    if hist_tail.len() != new_head.len() {
        return Err(DipError::Shape {
            what: "blend window",
            expected: hist_tail.len(),
            actual: new_head.len(),
        });
    }
    if hist_tail.len() > H_MAX {
        return Err(DipError::Validation(format!(
            "blend window of {} frames exceeds {H_MAX}",
            hist_tail.len()
        )));
    }
    let w = blend_weights(hist_tail.len());
    Ok(hist_tail
        .iter()
        .zip(new_head)
        .zip(w)
        .map(|((a, b), g)| blend_pose(a, b, g))
        .collect())
}

/// `prev[..len - H] ++ blended ++ new_tail`.
///
/// If `prev` is shorter than the blend window only its length is overlapped
/// and the surplus blended frames are dropped.
pub fn concat_long_term(prev: &[Pose], blended: &[Pose], new_tail: &[Pose]) -> Vec<Pose> {
    let h = blended.len().min(prev.len());
    let mut out = Vec::with_capacity(prev.len() - h + h + new_tail.len());
    out.extend_from_slice(&prev[..prev.len() - h]);
    out.extend_from_slice(&blended[..h]);
    out.extend_from_slice(new_tail);
    out
}
