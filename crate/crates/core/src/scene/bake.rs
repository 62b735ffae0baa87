use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::grid::{SceneField, SdfGrid};
use crate::error::{DipError, Result};

/// Distance stored everywhere when a scene has no obstacles.
pub const EMPTY_DISTANCE: f64 = 1.0e3;
/// Height of the clearance column used for the walkable mask.
pub const WALK_CLEARANCE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Obstacle {
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Obstacle description consumed by `dip bake`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub floor: f64,
    pub bounds: Bounds,
    pub spacing: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl Obstacle {
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Obstacle::Box {
                center,
                half_extents,
            } => {
                let q = (p - Vector3::from(center)).abs() - Vector3::from(half_extents);
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Obstacle::Sphere { center, radius } => (p - Vector3::from(center)).norm() - radius,
        }
    }

    fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        match *self {
            Obstacle::Box {
                center,
                half_extents,
            } => {
                let c = Vector3::from(center);
                let h = Vector3::from(half_extents);
                (c - h, c + h)
            }
            Obstacle::Sphere { center, radius } => {
                let c = Vector3::from(center);
                let r = Vector3::repeat(radius);
                (c - r, c + r)
            }
        }
    }

    fn smallest_extent(&self) -> f64 {
        match *self {
            Obstacle::Box { half_extents, .. } => {
                2.0 * half_extents.iter().cloned().fold(f64::INFINITY, f64::min)
            }
            Obstacle::Sphere { radius, .. } => 2.0 * radius,
        }
    }

    /// Whether the obstacle intersects the open vertical segment `(z0, z1)` at `(x, y)`.
    fn blocks_column(&self, x: f64, y: f64, z0: f64, z1: f64) -> bool {
        let (lo, hi) = match *self {
            Obstacle::Box {
                center,
                half_extents,
            } => {
                if (x - center[0]).abs() >= half_extents[0]
                    || (y - center[1]).abs() >= half_extents[1]
                {
                    return false;
                }
                (center[2] - half_extents[2], center[2] + half_extents[2])
            }
            Obstacle::Sphere { center, radius } => {
                let d2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                if d2 >= radius * radius {
                    return false;
                }
                let half = (radius * radius - d2).sqrt();
                (center[2] - half, center[2] + half)
            }
        };
        lo < z1 && hi > z0
    }
}

/// Samples the exact SDF of a union of primitives on a lattice covering
/// `bounds`, and marks columns with 2 units of clearance above the floor as
/// walkable.
pub fn bake_boxes(
    obstacles: &[Obstacle],
    floor_height: f64,
    bounds: &Bounds,
    spacing: f64,
) -> Result<SceneField> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(DipError::Validation(format!(
            "spacing {spacing} must be positive"
        )));
    }
    let lo = Vector3::from(bounds.min);
    let hi = Vector3::from(bounds.max);
    let mut dims = [0usize; 3];
    for a in 0..3 {
        if !(hi[a] > lo[a]) {
            return Err(DipError::Validation(format!(
                "bounds are empty along axis {a}"
            )));
        }
        dims[a] = (((hi[a] - lo[a]) / spacing) + 1e-9).floor() as usize + 1;
        dims[a] = dims[a].max(2);
    }
    for (i, o) in obstacles.iter().enumerate() {
        let (omin, omax) = o.aabb();
        if (0..3).any(|a| omin[a] < lo[a] || omax[a] > hi[a]) {
            return Err(DipError::Validation(format!(
                "obstacle {i} extends outside the scene bounds"
            )));
        }
        if o.smallest_extent() < 3.0 * spacing {
            log::warn!(
                "obstacle {i} is {:.3} across, fewer than 3 cells at spacing {spacing}",
                o.smallest_extent()
            );
        }
    }
    let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = lo + Vector3::new(i as f64, j as f64, k as f64) * spacing;
                let d = obstacles
                    .iter()
                    .map(|o| o.sdf(&p))
                    .fold(EMPTY_DISTANCE, f64::min);
                values.push(d as f32);
            }
        }
    }
    let mut walkable = Vec::with_capacity(dims[0] * dims[1]);
    for j in 0..dims[1] {
        for i in 0..dims[0] {
            let x = lo.x + i as f64 * spacing;
            let y = lo.y + j as f64 * spacing;
            let blocked = obstacles
                .iter()
                .any(|o| o.blocks_column(x, y, floor_height, floor_height + WALK_CLEARANCE));
            walkable.push(!blocked);
        }
    }
    let sdf = SdfGrid::new(dims, lo, spacing, values)?;
    SceneField::new(sdf, floor_height, Some(walkable))
}

pub fn bake_spec(spec: &SceneSpec) -> Result<SceneField> {
    bake_boxes(&spec.obstacles, spec.floor, &spec.bounds, spec.spacing)
}
