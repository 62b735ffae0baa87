//! Forward kinematics with a reverse-mode pass for reward gradients.

use nalgebra::{Matrix3, Vector3};

use super::pose::TAU_OFFSET;
use super::skeleton::{MarkerSet, Skeleton};
use crate::rotmath::{aa_to_mat, rotation_derivatives, AxisAngle};
use crate::{NUM_JOINTS, POSE_DIM};

pub type JointPositions = Vec<Vector3<f64>>;

/// Per-frame FK results kept around for the backward pass.
#[derive(Debug, Clone)]
pub struct FrameKinematics {
    pub joints: [Vector3<f64>; NUM_JOINTS],
    pub world: [Matrix3<f64>; NUM_JOINTS],
    pub local: [Matrix3<f64>; NUM_JOINTS],
}

/// FK on a flattened pose (`69` reals).
pub fn forward(pose: &[f64], skel: &Skeleton) -> FrameKinematics {
    debug_assert_eq!(pose.len(), POSE_DIM);
    let mut joints = [Vector3::zeros(); NUM_JOINTS];
    let mut world = [Matrix3::identity(); NUM_JOINTS];
    let mut local = [Matrix3::identity(); NUM_JOINTS];
    let tau = Vector3::new(pose[TAU_OFFSET], pose[TAU_OFFSET + 1], pose[TAU_OFFSET + 2]);
    for k in 0..NUM_JOINTS {
        local[k] = aa_to_mat(&AxisAngle::from_slice(&pose[3 * k..3 * k + 3])).0;
        match skel.parent(k) {
            None => {
                world[k] = local[k];
                joints[k] = tau + skel.offset(k);
            }
            Some(p) => {
                world[k] = world[p] * local[k];
                joints[k] = joints[p] + world[p] * skel.offset(k);
            }
        }
    }
    FrameKinematics {
        joints,
        world,
        local,
    }
}

pub fn forward_kinematics(pose: &[f64], skel: &Skeleton) -> JointPositions {
    forward(pose, skel).joints.to_vec()
}

/// Marker positions: joint position plus the offset rotated into the joint frame.
pub fn markers_from(fk: &FrameKinematics, ms: &MarkerSet) -> Vec<Vector3<f64>> {
    ms.markers()
        .iter()
        .map(|m| fk.joints[m.joint] + fk.world[m.joint] * m.offset)
        .collect()
}

pub fn compute_markers(pose: &[f64], skel: &Skeleton, ms: &MarkerSet) -> Vec<Vector3<f64>> {
    markers_from(&forward(pose, skel), ms)
}

/// Accumulates `d loss / d pose` into `out` given upstream gradients with
/// respect to joint and marker positions. Either slice may be empty.
pub fn backward(
    pose: &[f64],
    fk: &FrameKinematics,
    skel: &Skeleton,
    ms: &MarkerSet,
    d_joints: &[Vector3<f64>],
    d_markers: &[Vector3<f64>],
    out: &mut [f64],
) {
    let mut dp = [Vector3::zeros(); NUM_JOINTS];
    let mut dw = [Matrix3::zeros(); NUM_JOINTS];
    if !d_joints.is_empty() {
        dp.copy_from_slice(&d_joints[..NUM_JOINTS]);
    }
    for (m, g) in ms.markers().iter().zip(d_markers) {
        dp[m.joint] += g;
        dw[m.joint] += g * m.offset.transpose();
    }
    for k in (0..NUM_JOINTS).rev() {
        let d_local = match skel.parent(k) {
            Some(p) => {
                let g = dp[k];
                dp[p] += g;
                dw[p] += g * skel.offset(k).transpose() + dw[k] * fk.local[k].transpose();
                fk.world[p].transpose() * dw[k]
            }
            None => {
                for i in 0..3 {
                    out[TAU_OFFSET + i] += dp[k][i];
                }
                dw[k]
            }
        };
        if d_local.iter().all(|v| *v == 0.0) {
            continue;
        }
        let derivs = rotation_derivatives(&AxisAngle::from_slice(&pose[3 * k..3 * k + 3]));
        for i in 0..3 {
            out[3 * k + i] += d_local.component_mul(&derivs[i]).sum();
        }
    }
}

/// `d p_k / d pose` as three rows of 69.
pub fn joint_jacobian(
    pose: &[f64],
    fk: &FrameKinematics,
    skel: &Skeleton,
    k: usize,
) -> [[f64; POSE_DIM]; 3] {
    let mut jac = [[0.0; POSE_DIM]; 3];
    for (i, row) in jac.iter_mut().enumerate() {
        row[TAU_OFFSET + i] = 1.0;
    }
    let target = fk.joints[k];
    for j in skel.ancestors(k) {
        let parent_world = match skel.parent(j) {
            Some(p) => fk.world[p],
            None => Matrix3::identity(),
        };
        let v = fk.world[j].transpose() * (target - fk.joints[j]);
        let derivs = rotation_derivatives(&AxisAngle::from_slice(&pose[3 * j..3 * j + 3]));
        for (c, d) in derivs.iter().enumerate() {
            let col = parent_world * (d * v);
            for i in 0..3 {
                jac[i][3 * j + c] = col[i];
            }
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::skeleton::default_body;
    use crate::rotmath::RotMat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..POSE_DIM).map(|_| rng.random_range(-0.8..0.8)).collect()
    }

    #[test]
    fn rest_pose_accumulates_offsets() {
        let (skel, _) = default_body();
        let j = forward_kinematics(&[0.0; POSE_DIM], &skel);
        let rest = skel.rest_positions();
        for k in 0..NUM_JOINTS {
            assert!((j[k] - rest[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn translation_shifts_every_joint() {
        let (skel, ms) = default_body();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_pose(&mut rng);
        let a = forward_kinematics(&p, &skel);
        let ma = compute_markers(&p, &skel, &ms);
        p[66] += 1.0;
        p[67] += 2.0;
        p[68] += 3.0;
        let b = forward_kinematics(&p, &skel);
        let mb = compute_markers(&p, &skel, &ms);
        let shift = Vector3::new(1.0, 2.0, 3.0);
        for k in 0..NUM_JOINTS {
            assert!((b[k] - a[k] - shift).norm() < 1e-12);
        }
        for i in 0..ms.len() {
            assert!((mb[i] - ma[i] - shift).norm() < 1e-12);
        }
    }

    #[test]
    fn global_rotation_rotates_about_pelvis() {
        let (skel, _) = default_body();
        let mut p = [0.0; POSE_DIM];
        p[2] = std::f64::consts::FRAC_PI_2;
        let j = forward_kinematics(&p, &skel);
        let rest = skel.rest_positions();
        let rz = RotMat::about_z(std::f64::consts::FRAC_PI_2).0;
        for k in 0..NUM_JOINTS {
            let want = rest[0] + rz * (rest[k] - rest[0]);
            assert!((j[k] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn global_rotation_equivariance_random() {
        let (skel, _) = default_body();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = random_pose(&mut rng);
            let r = crate::rotmath::aa_to_mat(&AxisAngle::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let mut q = p.clone();
            let g = r.0 * aa_to_mat(&AxisAngle::from_slice(&p[0..3])).0;
            let ga = crate::rotmath::mat_to_aa(&RotMat(g)).unwrap();
            q[0..3].copy_from_slice(ga.0.as_slice());
            let a = forward_kinematics(&p, &skel);
            let b = forward_kinematics(&q, &skel);
            for k in 0..NUM_JOINTS {
                assert!((b[k] - (a[0] + r.0 * (a[k] - a[0]))).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn heel_marker_offset_at_rest() {
        let (skel, ms) = default_body();
        let i = ms
            .markers()
            .iter()
            .position(|m| m.name == "left_heel")
            .unwrap();
        let m = &ms.markers()[i];
        assert_eq!(m.offset, Vector3::new(0.0, -0.05, -0.08));
        let j = skel.rest_positions();
        let mk = compute_markers(&[0.0; POSE_DIM], &skel, &ms);
        assert!((mk[i] - (j[m.joint] + m.offset)).norm() < 1e-15);
    }

    #[test]
    fn zero_offset_markers_sit_on_joints() {
        let (skel, ms) = default_body();
        let mut markers = ms.markers().to_vec();
        for m in &mut markers {
            m.offset = Vector3::zeros();
        }
        let ms0 = MarkerSet::new(markers, &skel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_pose(&mut rng);
        let j = forward_kinematics(&p, &skel);
        let mk = compute_markers(&p, &skel, &ms0);
        for (m, pos) in ms0.markers().iter().zip(&mk) {
            assert!((pos - j[m.joint]).norm() < 1e-15);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (skel, ms) = default_body();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_pose(&mut rng);
        let wj: Vec<Vector3<f64>> = (0..NUM_JOINTS)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let wm: Vec<Vector3<f64>> = (0..ms.len())
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let loss = |q: &[f64]| {
            let fk = forward(q, &skel);
            let mk = markers_from(&fk, &ms);
            fk.joints
                .iter()
                .zip(&wj)
                .map(|(a, b)| a.dot(b))
                .sum::<f64>()
                + mk.iter().zip(&wm).map(|(a, b)| a.dot(b)).sum::<f64>()
        };
        let fk = forward(&p, &skel);
        let mut g = vec![0.0; POSE_DIM];
        backward(&p, &fk, &skel, &ms, &wj, &wm, &mut g);
        for i in 0..POSE_DIM {
            let h = 1e-6;
            let mut a = p.clone();
            a[i] += h;
            let mut b = p.clone();
            b[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "dim {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (skel, _) = default_body();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_pose(&mut rng);
        let fk = forward(&p, &skel);
        for k in [0, 4, 15, 21] {
            let jac = joint_jacobian(&p, &fk, &skel, k);
            for d in 0..POSE_DIM {
                let h = 1e-6;
                let mut a = p.clone();
                a[d] += h;
                let mut b = p.clone();
                b[d] -= h;
                let fd = (forward(&a, &skel).joints[k] - forward(&b, &skel).joints[k]) / (2.0 * h);
                for i in 0..3 {
                    assert!((fd[i] - jac[i][d]).abs() < 1e-7, "joint {k} dim {d}");
                }
            }
        }
    }
}
