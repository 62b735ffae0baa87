//! Evaluation metrics on world-space motions.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::Serialize;

use crate::kinematics::{
    compute_markers, forward, markers_from, MarkerSet, MotionClip, Skeleton, FOOT_JOINTS, PELVIS,
};
use crate::scene::SceneField;

/// Foot height allowed above the floor before the contact score decays.
pub const CONTACT_HEIGHT: f64 = 0.05;
/// Foot speed (units/s) allowed before the contact score decays.
pub const CONTACT_SPEED: f64 = 0.075;
/// Horizontal pelvis distance counted as arrived.
pub const ARRIVAL_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub finish_time: f64,
    pub avg_goal_distance: f64,
    pub contact_score: f64,
    pub pene_mean: f64,
    pub pene_max: f64,
    pub walkable_score: f64,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 6] = [
        "finish_time",
        "avg_goal_distance",
        "contact_score",
        "pene_mean",
        "pene_max",
        "walkable_score",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.finish_time,
            self.avg_goal_distance,
            self.contact_score,
            self.pene_mean,
            self.pene_max,
            self.walkable_score,
        ]
    }

    /// `key value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in Self::FIELDS.iter().zip(self.values()) {
            writeln!(s, "{k} {v:.6}").unwrap();
        }
        s
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn joints(motion: &MotionClip, skel: &Skeleton) -> Vec<[Vector3<f64>; crate::NUM_JOINTS]> {
    motion
        .frames
        .iter()
        .map(|p| forward(&p.0, skel).joints)
        .collect()
}

fn markers(motion: &MotionClip, skel: &Skeleton, ms: &MarkerSet) -> Vec<Vec<Vector3<f64>>> {
    motion
        .frames
        .iter()
        .map(|p| markers_from(&forward(&p.0, skel), ms))
        .collect()
}

/// Score of one frame from its lowest foot height above the floor and its
/// slowest foot speed.
pub fn contact_frame_score(height: f64, speed: f64) -> f64 {
    (-(height.abs() - CONTACT_HEIGHT).max(0.0)).exp() * (-(speed - CONTACT_SPEED).max(0.0)).exp()
}

/// Per-frame foot contact score averaged over frames. Speeds use forward
/// differences; the last frame reuses the previous speed.
pub fn contact_score(motion: &MotionClip, skel: &Skeleton, scene: &SceneField) -> f64 {
    let j = joints(motion, skel);
    let n = j.len();
    if n == 0 {
        return 1.0;
    }
    let speed = |s: usize| -> f64 {
        if n < 2 {
            return 0.0;
        }
        let s = s.min(n - 2);
        FOOT_JOINTS
            .iter()
            .map(|&k| (j[s + 1][k] - j[s][k]).norm() * motion.fps)
            .fold(f64::INFINITY, f64::min)
    };
    let total: f64 = (0..n)
        .map(|s| {
            let low = FOOT_JOINTS
                .iter()
                .map(|&k| j[s][k].z)
                .fold(f64::INFINITY, f64::min);
            contact_frame_score(low - scene.floor_height, speed(s))
        })
        .sum();
    total / n as f64
}

/// Summed marker penetration depth per frame, then its mean and max over frames.
pub fn penetration_stats(
    motion: &MotionClip,
    skel: &Skeleton,
    ms: &MarkerSet,
    scene: &SceneField,
) -> (f64, f64) {
    let per_frame: Vec<f64> = markers(motion, skel, ms)
        .iter()
        .map(|mk| mk.iter().map(|p| (-scene.sdf_query(p).0).max(0.0)).sum())
        .collect();
    if per_frame.is_empty() {
        return (0.0, 0.0);
    }
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    (mean, per_frame.iter().copied().fold(0.0, f64::max))
}

/// Fraction of marker samples over walkable columns; zero without a mask.
pub fn walkable_score(
    motion: &MotionClip,
    skel: &Skeleton,
    ms: &MarkerSet,
    scene: &SceneField,
) -> f64 {
    if scene.walkable.is_none() {
        return 0.0;
    }
    let mk = markers(motion, skel, ms);
    let total = mk.iter().map(Vec::len).sum::<usize>();
    if total == 0 {
        return 0.0;
    }
    let hits = mk.iter().flatten().filter(|p| scene.is_walkable(p)).count();
    hits as f64 / total as f64
}

/// Finish time in seconds and final horizontal pelvis-to-goal distance.
pub fn finish_metrics(motion: &MotionClip, skel: &Skeleton, goal: &Vector3<f64>) -> (f64, f64) {
    let j = joints(motion, skel);
    let dist: Vec<f64> = j.iter().map(|f| (f[PELVIS] - goal).xy().norm()).collect();
    let n = dist.len();
    let mut first = n;
    for s in (0..n).rev() {
        if dist[s] <= ARRIVAL_RADIUS {
            first = s;
        } else {
            break;
        }
    }
    let finish = if first < n {
        (first + 1) as f64
    } else {
        n as f64
    } / motion.fps;
    (finish, dist.last().copied().unwrap_or(f64::NAN))
}

/// All metrics for one motion and pelvis goal.
pub fn evaluate(
    motion: &MotionClip,
    skel: &Skeleton,
    ms: &MarkerSet,
    scene: &SceneField,
    goal: &Vector3<f64>,
) -> MetricsReport {
    let (finish_time, avg_goal_distance) = finish_metrics(motion, skel, goal);
    let (pene_mean, pene_max) = penetration_stats(motion, skel, ms, scene);
    MetricsReport {
        finish_time,
        avg_goal_distance,
        contact_score: contact_score(motion, skel, scene),
        pene_mean,
        pene_max,
        walkable_score: walkable_score(motion, skel, ms, scene),
    }
}

/// Largest second-difference marker acceleration in units/s^2.
pub fn max_marker_acceleration(motion: &MotionClip, skel: &Skeleton, ms: &MarkerSet) -> f64 {
    let pts: Vec<Vec<Vector3<f64>>> = motion
        .frames
        .iter()
        .map(|p| compute_markers(&p.0, skel, ms))
        .collect();
    let fps2 = motion.fps * motion.fps;
    pts.windows(3)
        .flat_map(|w| {
            (0..w[1].len()).map(move |m| (w[2][m] - 2.0 * w[1][m] + w[0][m]).norm() * fps2)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{default_body, forward_kinematics, Pose};
    use crate::scene::{bake_boxes, Bounds, Obstacle, SdfGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty() -> SceneField {
        let b = Bounds {
            min: [-5.0, -5.0, 0.0],
            max: [5.0, 5.0, 2.0],
        };
        bake_boxes(&[], 0.0, &b, 0.25).unwrap()
    }

    /// Rest pose lifted so the lowest foot joint sits at `h`.
    fn lifted(skel: &Skeleton, h: f64) -> Pose {
        let j = forward_kinematics(&[0.0; crate::POSE_DIM], skel);
        let low = FOOT_JOINTS
            .iter()
            .map(|&k| j[k].z)
            .fold(f64::INFINITY, f64::min);
        let mut p = Pose::rest();
        p.0[68] = h - low;
        p
    }

    fn sliding(skel: &Skeleton, h: f64, speed: f64, frames: usize) -> MotionClip {
        let frames = (0..frames)
            .map(|s| {
                let mut p = lifted(skel, h);
                p.0[66] = speed * s as f64 / 40.0;
                p
            })
            .collect();
        MotionClip::new(frames, 40.0)
    }

    #[test]
    fn contact_unit_values() {
        let (skel, _) = default_body();
        let sc = empty();
        assert!((contact_frame_score(0.05, 0.075) - 1.0).abs() < 1e-15);
        assert!((contact_frame_score(1.05, 0.075) - (-1.0f64).exp()).abs() < 1e-15);
        let m = sliding(&skel, 0.05, 0.075, 6);
        assert!((contact_score(&m, &skel, &sc) - 1.0).abs() < 1e-12);
        let m = sliding(&skel, 1.05, 0.075, 6);
        assert!((contact_score(&m, &skel, &sc) - (-1.0f64).exp()).abs() < 1e-12);
        let m = sliding(&skel, 0.0, 0.0, 6);
        assert_eq!(contact_score(&m, &skel, &sc), 1.0);
    }

    #[test]
    fn contact_is_monotone() {
        let mut prev = 1.0;
        for i in 0..20 {
            let v = contact_frame_score(0.05 + 0.1 * i as f64, 0.3);
            assert!(v <= prev);
            prev = v;
        }
        let mut prev = 1.0;
        for i in 0..20 {
            let v = contact_frame_score(0.2, 0.075 + 0.1 * i as f64);
            assert!(v <= prev);
            prev = v;
        }
    }

    fn uniform(value: f32) -> SceneField {
        let g = SdfGrid::new(
            [2, 2, 2],
            Vector3::new(-9.0, -9.0, -9.0),
            18.0,
            vec![value; 8],
        )
        .unwrap();
        SceneField::new(g, -9.0, None).unwrap()
    }

    #[test]
    fn penetration_unit_values() {
        let (skel, ms) = default_body();
        let m = MotionClip::new(vec![Pose::rest(); 4], 40.0);
        assert_eq!(penetration_stats(&m, &skel, &ms, &uniform(0.3)), (0.0, 0.0));
        let (mean, max) = penetration_stats(&m, &skel, &ms, &uniform(-0.1));
        let want = 0.1f32 as f64 * ms.len() as f64;
        assert!((mean - want).abs() < 1e-9 && (max - want).abs() < 1e-9);
    }

    #[test]
    fn penetration_matches_brute_force() {
        let (skel, ms) = default_body();
        let b = Bounds {
            min: [-2.0, -2.0, 0.0],
            max: [2.0, 2.0, 2.0],
        };
        let o = Obstacle::Box {
            center: [0.0, 0.0, 0.6],
            half_extents: [0.4, 0.4, 0.6],
        };
        let sc = bake_boxes(&[o], 0.0, &b, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let frames: Vec<Pose> = (0..15)
            .map(|_| {
                let mut p = Pose::rest();
                for v in p.0.iter_mut().take(66) {
                    *v = rng.random_range(-0.4..0.4);
                }
                p.0[66] = rng.random_range(-1.0..1.0);
                p.0[67] = rng.random_range(-1.0..1.0);
                p
            })
            .collect();
        let m = MotionClip::new(frames.clone(), 40.0);
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for f in &frames {
            let mut here = 0.0;
            for p in crate::kinematics::compute_markers(&f.0, &skel, &ms) {
                let d = sc.sdf_query(&p).0;
                if d < 0.0 {
                    here += d.abs();
                }
            }
            sum += here;
            max = max.max(here);
        }
        let (mean, mx) = penetration_stats(&m, &skel, &ms, &sc);
        assert_eq!(mean, sum / 15.0);
        assert_eq!(mx, max);
        assert!(mx > 0.0);
    }

    #[test]
    fn walkable_values() {
        let (skel, ms) = default_body();
        let m = MotionClip::new(vec![Pose::rest(); 3], 40.0);
        let b = Bounds {
            min: [-2.0, -2.0, 0.0],
            max: [2.0, 2.0, 2.5],
        };
        let sc = bake_boxes(&[], 0.0, &b, 0.1).unwrap();
        assert_eq!(walkable_score(&m, &skel, &ms, &sc), 1.0);
        assert_eq!(walkable_score(&m, &skel, &ms, &uniform(1.0)), 0.0);

        // hand-built mask: columns with x < 0 blocked
        let mut half = sc.clone();
        let [nx, ny, _] = half.sdf.dims;
        let mask = (0..nx * ny)
            .map(|i| half.sdf.node(i % nx, i / nx, 0).x >= 0.0)
            .collect::<Vec<_>>();
        half.walkable = Some(mask);
        let mk = crate::kinematics::compute_markers(&[0.0; crate::POSE_DIM], &skel, &ms);
        let want = mk.iter().filter(|p| half.is_walkable(p)).count() as f64 / mk.len() as f64;
        assert!((walkable_score(&m, &skel, &ms, &half) - want).abs() < 1e-12);
        assert!(want > 0.2 && want < 0.8, "{want}");
    }

    #[test]
    fn finish_values() {
        let (skel, _) = default_body();
        let pelvis = forward_kinematics(&[0.0; crate::POSE_DIM], &skel)[PELVIS];
        let still = MotionClip::new(vec![Pose::rest(); 50], 40.0);
        let (t, d) = finish_metrics(&still, &skel, &pelvis);
        assert_eq!((t, d), (1.0 / 40.0, 0.0));
        let far = pelvis + Vector3::new(5.0, 0.0, 0.0);
        assert_eq!(finish_metrics(&still, &skel, &far), (50.0 / 40.0, 5.0));
        // arrives at frame 100 (1-based) and stays
        let frames = (0..160)
            .map(|s| {
                let mut p = Pose::rest();
                p.0[67] = if s < 99 {
                    2.0 * s as f64 / 99.0 - 0.2
                } else {
                    2.0
                };
                p
            })
            .collect();
        let m = MotionClip::new(frames, 40.0);
        let goal = pelvis + Vector3::new(0.0, 2.05, 0.0);
        let (t, d) = finish_metrics(&m, &skel, &goal);
        assert!((t - 2.5).abs() < 1e-12, "{t}");
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn report_text() {
        let r = MetricsReport {
            finish_time: 2.5,
            avg_goal_distance: 0.03,
            contact_score: 0.9,
            pene_mean: 0.0,
            pene_max: 0.0,
            walkable_score: 1.0,
        };
        assert!(r.to_kv().starts_with("finish_time 2.500000\n"));
        assert_eq!(
            MetricsReport::csv_header().split(',').count(),
            r.csv_row().split(',').count()
        );
    }

    #[test]
    fn marker_acceleration_of_constant_acceleration_drift() {
        let (skel, ms) = default_body();
        // tau_x = 0.5 * a * (s / fps)^2 moves every marker with acceleration a
        let frames: Vec<Pose> = (0..6)
            .map(|s| {
                let mut p = Pose::rest();
                p.0[66] = 0.5 * 2.0 * (s as f64 / 40.0).powi(2);
                p
            })
            .collect();
        let a = max_marker_acceleration(&MotionClip::new(frames, 40.0), &skel, &ms);
        assert!((a - 2.0).abs() < 1e-9, "{a}");
        let still = MotionClip::new(vec![Pose::rest(); 4], 40.0);
        assert_eq!(max_marker_acceleration(&still, &skel, &ms), 0.0);
    }
}
