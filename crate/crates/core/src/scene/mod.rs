//! Scenes as signed distance fields with a floor height and walkable mask.

pub mod bake;
pub mod grid;
pub mod io;

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use bake::{
    bake_boxes, bake_spec, Bounds, Obstacle, SceneSpec, EMPTY_DISTANCE, WALK_CLEARANCE,
};
pub use grid::{SceneField, SdfGrid};
pub use io::{decode_scene, encode_scene, load_scene, save_scene};

use crate::error::{DipError, Result};
use crate::kinematics::RigidTransform;
use crate::NUM_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Locomotion,
    Sit,
    Lie,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Locomotion, Action::Sit, Action::Lie];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Locomotion => "locomotion",
            Action::Sit => "sit",
            Action::Lie => "lie",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Action::Locomotion => 0,
            Action::Sit => 1,
            Action::Lie => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Action> {
        Action::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = DipError;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| DipError::Validation(format!("unknown action `{s}`")))
    }
}

/// Target joint positions for one sub-task.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub joints: Vec<(usize, Vector3<f64>)>,
    pub action: Action,
}

impl GoalSpec {
    pub fn new(joints: Vec<(usize, Vector3<f64>)>, action: Action) -> Result<Self> {
        if joints.is_empty() {
            return Err(DipError::Validation(
                "goal needs at least one target joint".into(),
            ));
        }
        if let Some((j, _)) = joints.iter().find(|(j, _)| *j >= NUM_JOINTS) {
            return Err(DipError::Validation(format!("goal joint {j} out of range")));
        }
        if joints.iter().any(|(_, p)| !p.iter().all(|v| v.is_finite())) {
            return Err(DipError::Validation("goal position must be finite".into()));
        }
        Ok(GoalSpec { joints, action })
    }

    /// Pelvis-only goal.
    pub fn pelvis(target: Vector3<f64>, action: Action) -> Self {
        GoalSpec {
            joints: vec![(0, target)],
            action,
        }
    }

    /// The same goal expressed through a rigid map.
    pub fn transformed(&self, t: &RigidTransform) -> GoalSpec {
        GoalSpec {
            joints: self
                .joints
                .iter()
                .map(|(j, p)| (*j, t.apply_point(p)))
                .collect(),
            action: self.action,
        }
    }
}

/// A scene seen from a local frame: points are mapped to the world before
/// querying and gradients are rotated back.
#[derive(Debug, Clone, Copy)]
pub struct SceneView<'a> {
    pub scene: &'a SceneField,
    pub to_world: RigidTransform,
}

impl<'a> SceneView<'a> {
    pub fn world(scene: &'a SceneField) -> Self {
        SceneView {
            scene,
            to_world: RigidTransform::identity(),
        }
    }

    pub fn new(scene: &'a SceneField, to_world: RigidTransform) -> Self {
        SceneView { scene, to_world }
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let (v, g) = self.scene.sdf_query(&self.to_world.apply_point(p));
        (v, self.to_world.rot.0.transpose() * g)
    }

    /// Lattice cell and in-cell position of a local point.
    pub fn locate(&self, p: &Vector3<f64>) -> ([usize; 3], [f64; 3]) {
        self.scene.sdf.locate(&self.to_world.apply_point(p))
    }

    /// Floor height in local coordinates. Exact for transforms that keep the
    /// vertical axis, which canonical frames do.
    pub fn floor_height(&self) -> f64 {
        self.scene.floor_height - self.to_world.trans.z
    }

    pub fn is_walkable(&self, p: &Vector3<f64>) -> bool {
        self.scene.is_walkable(&self.to_world.apply_point(p))
    }
}
