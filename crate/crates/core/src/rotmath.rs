//! Axis-angle and rotation-matrix conversions plus fractional powers of
//! rotations, used for power-space blending of poses.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{DipError, Result};

/// Below this angle the log/exp maps use their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Inputs to [`mat_to_aa`] further than this from SO(3) are rejected.
pub const ORTHO_REJECT: f64 = 1e-4;
/// Near-pi band in which the rotation axis is read from the symmetric part.
const NEAR_PI: f64 = 1e-3;

/// Rotation vector: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

/// 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat(pub Matrix3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn from_slice(v: &[f64]) -> Self {
        AxisAngle(Vector3::new(v[0], v[1], v[2]))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Equivalent rotation vector with angle in `[0, pi]`.
    ///
    /// Angles past pi are wrapped by flipping the axis. At exactly pi the
    /// axis sign is chosen so its largest-magnitude component is positive.
    pub fn canonical(&self) -> AxisAngle {
        let theta = self.0.norm();
        if theta < SMALL_ANGLE {
            return *self;
        }
        let mut axis = self.0 / theta;
        let mut wrapped = theta.rem_euclid(2.0 * PI);
        if wrapped > PI {
            wrapped = 2.0 * PI - wrapped;
            axis = -axis;
        }
        if wrapped < SMALL_ANGLE {
            return AxisAngle::zero();
        }
        if (wrapped - PI).abs() < 1e-12 {
            axis = fix_axis_sign(axis);
        }
        AxisAngle(axis * wrapped)
    }
}

impl RotMat {
    pub fn identity() -> Self {
        RotMat(Matrix3::identity())
    }

    /// Wraps `m` after checking it is within [`ORTHO_REJECT`] of SO(3).
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let r = RotMat(m);
        let err = r.orthonormality_error();
        if err > ORTHO_REJECT || !err.is_finite() {
            return Err(DipError::NotRotation(err));
        }
        Ok(r)
    }

    /// max(||M^T M - I||_F, |det M - 1|)
    pub fn orthonormality_error(&self) -> f64 {
        let m = &self.0;
        let e = (m.transpose() * m - Matrix3::identity()).norm();
        e.max((m.determinant() - 1.0).abs())
    }

    pub fn transpose(&self) -> RotMat {
        RotMat(self.0.transpose())
    }

    pub fn mul(&self, other: &RotMat) -> RotMat {
        RotMat(self.0 * other.0)
    }

    pub fn about_x(angle: f64) -> Self {
        aa_to_mat(&AxisAngle::new(angle, 0.0, 0.0))
    }

    pub fn about_y(angle: f64) -> Self {
        aa_to_mat(&AxisAngle::new(0.0, angle, 0.0))
    }

    pub fn about_z(angle: f64) -> Self {
        aa_to_mat(&AxisAngle::new(0.0, 0.0, angle))
    }

    /// Geodesic angle between two rotations.
    pub fn angle_to(&self, other: &RotMat) -> f64 {
        let rel = other.0 * self.0.transpose();
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let s = vee(&(rel - rel.transpose())).norm() * 0.5;
        s.atan2(c)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn fix_axis_sign(axis: Vector3<f64>) -> Vector3<f64> {
    let i = axis.iamax();
    if axis[i] < 0.0 {
        -axis
    } else {
        axis
    }
}

/// Rodrigues' formula.
pub fn aa_to_mat(a: &AxisAngle) -> RotMat {
    let v = a.0;
    let theta = v.norm();
    let k = skew(&v);
    if theta < SMALL_ANGLE {
        return RotMat(Matrix3::identity() + k + k * k * 0.5);
    }
    let (s, c) = theta.sin_cos();
    let t2 = theta * theta;
    RotMat(Matrix3::identity() + k * (s / theta) + k * k * ((1.0 - c) / t2))
}

/// Rotation log map. Rejects matrices further than [`ORTHO_REJECT`] from SO(3).
pub fn mat_to_aa(m: &RotMat) -> Result<AxisAngle> {
    let err = m.orthonormality_error();
    if err > ORTHO_REJECT || !err.is_finite() {
        return Err(DipError::NotRotation(err));
    }
    Ok(log_unchecked(&m.0))
}

pub(crate) fn log_unchecked(m: &Matrix3<f64>) -> AxisAngle {
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // w = sin(theta) * axis
    let w = vee(&(m - m.transpose())) * 0.5;
    let s = w.norm();
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return AxisAngle(w * (1.0 + theta * theta / 6.0));
    }
    if theta < PI - NEAR_PI {
        return AxisAngle(w * (theta / s));
    }
    // Near pi: the symmetric part is (cos) I + (1 - cos) a a^T.
    let sym = (m + m.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * c) / (1.0 - c);
    let d = outer.diagonal();
    let i = d.imax();
    let mut axis = outer.column(i) / d[i].max(0.0).sqrt();
    axis /= axis.norm();
    if s > 1e-10 {
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
    } else {
        axis = fix_axis_sign(axis);
    }
    AxisAngle(axis * theta)
}

/// `m^gamma`: rotation about the same axis with the angle scaled by `gamma`.
pub fn mat_power(m: &RotMat, gamma: f64) -> RotMat {
    let a = log_unchecked(&m.0);
    aa_to_mat(&AxisAngle(a.0 * gamma))
}

/// `(new * old^-1)^gamma * old`. Exact endpoints at gamma 0 and 1.
pub fn blend_rot(old: &RotMat, new: &RotMat, gamma: f64) -> RotMat {
    if gamma == 0.0 {
        return *old;
    }
    if gamma == 1.0 {
        return *new;
    }
    let rel = RotMat(new.0 * old.0.transpose());
    RotMat(mat_power(&rel, gamma).0 * old.0)
}

/// Partial derivatives of `aa_to_mat(a)` with respect to each component of `a`.
pub fn rotation_derivatives(a: &AxisAngle) -> [Matrix3<f64>; 3] {
    let v = a.0;
    let theta2 = v.norm_squared();
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    if theta2.sqrt() < SMALL_ANGLE {
        let k = skew(&v);
        return basis.map(|e| {
            let ei = skew(&e);
            ei + (ei * k + k * ei) * 0.5
        });
    }
    let r = aa_to_mat(a).0;
    let k = skew(&v);
    let i_minus_r = Matrix3::identity() - r;
    let mut out = [Matrix3::zeros(); 3];
    for (i, e) in basis.iter().enumerate() {
        let cross = v.cross(&(i_minus_r * e));
        out[i] = (k * v[i] + skew(&cross)) * r / theta2;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_aa(rng: &mut ChaCha8Rng, max_angle: f64) -> AxisAngle {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        AxisAngle(axis * rng.random_range(0.0..max_angle))
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(aa_to_mat(&AxisAngle::zero()).0, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let m = aa_to_mat(&AxisAngle::new(0.0, 0.0, PI / 2.0));
        let col = m.0.column(0);
        assert!((col - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn identity_log_is_zero() {
        let a = mat_to_aa(&RotMat::identity()).unwrap();
        assert_eq!(a.0, Vector3::zeros());
    }

    #[test]
    fn half_turn_axis_sign() {
        let a = mat_to_aa(&RotMat::about_z(PI)).unwrap();
        assert!((a.0 - Vector3::new(0.0, 0.0, PI)).norm() < 1e-12);
        let a = mat_to_aa(&RotMat::about_z(-PI)).unwrap();
        assert!((a.0 - Vector3::new(0.0, 0.0, PI)).norm() < 1e-12);
        let diag = AxisAngle(Vector3::new(-1.0, -2.0, 0.5).normalize() * PI);
        let a = mat_to_aa(&aa_to_mat(&diag)).unwrap();
        assert!((a.0 + diag.0).norm() < 1e-9);
    }

    #[test]
    fn trace_above_three_is_clamped() {
        let m = RotMat(Matrix3::identity() * (1.0 + 1e-12));
        let a = mat_to_aa(&m).unwrap();
        assert_eq!(a.0, Vector3::zeros());
    }

    #[test]
    fn rejects_non_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.01;
        assert!(matches!(
            mat_to_aa(&RotMat(m)),
            Err(DipError::NotRotation(_))
        ));
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let raw = AxisAngle(Vector3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            ));
            let back = mat_to_aa(&aa_to_mat(&raw)).unwrap();
            let want = raw.canonical();
            assert!(
                (back.0 - want.0).norm() < 1e-9,
                "{raw:?} -> {back:?} vs {want:?}"
            );
            assert!(back.angle() <= PI + 1e-12);
        }
    }

    #[test]
    fn power_scales_angle() {
        let m = mat_power(&RotMat::about_z(PI / 2.0), 1.0 / 3.0);
        assert!((m.0 - RotMat::about_z(PI / 6.0).0).norm() < 1e-12);
        let r = RotMat::about_x(0.7).mul(&RotMat::about_y(-1.1));
        assert!((mat_power(&r, 0.0).0 - Matrix3::identity()).norm() < 1e-15);
        assert!((mat_power(&r, 1.0).0 - r.0).norm() < 1e-12);
    }

    #[test]
    fn power_near_pi_is_defined() {
        let m = RotMat::about_y(PI - 1e-7);
        let h = mat_power(&m, 0.5);
        assert!(h.orthonormality_error() < 1e-12);
        assert!((h.0 * h.0 - m.0).norm() < 1e-6);
    }

    #[test]
    fn half_powers_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = aa_to_mat(&random_aa(&mut rng, 3.1));
            let h = mat_power(&m, 0.5);
            assert!((h.0 * h.0 - m.0).norm() < 1e-9);
        }
    }

    #[test]
    fn power_additivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let m = aa_to_mat(&random_aa(&mut rng, 3.1));
            let g1 = rng.random_range(0.0..0.5);
            let g2 = rng.random_range(0.0..0.5);
            let lhs = mat_power(&m, g1 + g2);
            let rhs = mat_power(&m, g1).mul(&mat_power(&m, g2));
            assert!((lhs.0 - rhs.0).norm() < 1e-9);
        }
    }

    #[test]
    fn blend_basic_cases() {
        let i = RotMat::identity();
        let q = RotMat::about_z(PI / 2.0);
        assert!((blend_rot(&i, &q, 0.5).0 - RotMat::about_z(PI / 4.0).0).norm() < 1e-12);
        for g in [0.0, 0.3, 0.8, 1.0] {
            assert!((blend_rot(&q, &q, g).0 - q.0).norm() < 1e-12);
        }
        assert_eq!(blend_rot(&i, &q, 0.0), i);
        assert_eq!(blend_rot(&i, &q, 1.0), q);
    }

    #[test]
    fn blend_symmetry_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let a = aa_to_mat(&random_aa(&mut rng, 3.0));
            let b = aa_to_mat(&random_aa(&mut rng, 3.0));
            if a.angle_to(&b) > PI - 1e-3 {
                continue;
            }
            let mut last = -1.0;
            for k in 0..=20 {
                let g = k as f64 / 20.0;
                let x = blend_rot(&a, &b, g);
                let y = blend_rot(&b, &a, 1.0 - g);
                assert!((x.0 - y.0).norm() < 1e-9);
                assert!(x.orthonormality_error() < 1e-6);
                let d = a.angle_to(&x);
                assert!(d >= last - 1e-12);
                last = d;
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cases: Vec<AxisAngle> = (0..50).map(|_| random_aa(&mut rng, 3.0)).collect();
        cases.push(AxisAngle::zero());
        cases.push(AxisAngle::new(1e-9, -2e-9, 0.0));
        for a in cases {
            let d = rotation_derivatives(&a);
            for i in 0..3 {
                let h = 1e-6;
                let mut p = a.0;
                p[i] += h;
                let mut m = a.0;
                m[i] -= h;
                let fd = (aa_to_mat(&AxisAngle(p)).0 - aa_to_mat(&AxisAngle(m)).0) / (2.0 * h);
                assert!((fd - d[i]).norm() < 1e-7, "{a:?} component {i}");
            }
        }
    }
}
